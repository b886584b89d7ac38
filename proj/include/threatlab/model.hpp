// Copyright 2026 The threatlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "threatlab/error.hpp"
#include "threatlab/ipcalc.hpp"

namespace threatlab {

// -- MAC addresses ------------------------------------------------------------

class MacAddress {
public:
  constexpr MacAddress() noexcept = default;
  constexpr explicit MacAddress(std::array<std::uint8_t, 6> octets) noexcept : octets_(octets) {}

  /// Accepts six colon-separated two-digit hex groups, either case.
  static MacAddress parse(std::string_view text) {
    auto hex = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    };
    if (text.size() != 17)
      throw Error(Errc::parse, "malformed MAC address '" + std::string(text) + "'");
    std::array<std::uint8_t, 6> octets{};
    for (std::size_t i = 0; i < 6; ++i) {
      const std::size_t at = i * 3;
      const int hi = hex(text[at]);
      const int lo = hex(text[at + 1]);
      if (hi < 0 || lo < 0 || (i < 5 && text[at + 2] != ':'))
        throw Error(Errc::parse, "malformed MAC address '" + std::string(text) + "'");
      octets[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return MacAddress{octets};
  }

  const std::array<std::uint8_t, 6>& octets() const noexcept { return octets_; }

  std::string to_string() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(17);
    for (std::size_t i = 0; i < 6; ++i) {
      if (i != 0)
        out += ':';
      out += digits[octets_[i] >> 4];
      out += digits[octets_[i] & 0xf];
    }
    return out;
  }

  constexpr auto operator<=>(const MacAddress&) const noexcept = default;

private:
  std::array<std::uint8_t, 6> octets_{};
};

// -- Roles and slots ------------------------------------------------------------

enum class VmRole { victim, attacker, scanner };

inline constexpr std::array<VmRole, 3> all_roles = {VmRole::victim, VmRole::attacker,
                                                    VmRole::scanner};

inline const char* to_string(VmRole role) noexcept {
  switch (role) {
    case VmRole::victim: return "victim";
    case VmRole::attacker: return "attacker";
    case VmRole::scanner: return "scanner";
  }
  return "?";
}

inline VmRole parse_role(std::string_view text) {
  for (auto role : all_roles)
    if (text == to_string(role))
      return role;
  throw Error(Errc::parse, "unknown VM role '" + std::string(text) + "'");
}

inline Ipv4Address reserved_ip(const Ipv4Network& net, VmRole role) noexcept {
  const auto r = vm_reservations(net);
  switch (role) {
    case VmRole::victim: return r.victim;
    case VmRole::attacker: return r.attacker;
    case VmRole::scanner: return r.scanner;
  }
  return r.victim;
}

/// Linux caps interface names at 15 bytes (IFNAMSIZ - 1).
inline constexpr std::size_t max_interface_name = 15;

inline bool valid_interface_name(std::string_view name) noexcept {
  if (name.empty() || name.size() > max_interface_name)
    return false;
  return std::none_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isspace(c) || c == '/' || c == '=' || !std::isprint(c);
  });
}

/// VM and snapshot names are substituted into command lines; no blanks.
inline bool valid_token(std::string_view name) noexcept {
  return !name.empty() && std::none_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isspace(c) || c == '=' || !std::isprint(c);
  });
}

struct VmSlot {
  VmRole role = VmRole::victim;
  std::string tap_name;
  MacAddress tap_mac;
  Ipv4Address reserved_ip;
  std::string vm_name; // name known to the VM controller

  bool operator==(const VmSlot&) const = default;
};

// -- Redirectors -------------------------------------------------------------------

struct PortRedirection {
  std::uint16_t exposed_port = 0;
  std::uint16_t victim_port = 0;

  auto operator<=>(const PortRedirection&) const = default;
};

inline std::uint16_t checked_port(long long port) {
  if (port < 1 || port > 65535)
    throw Error(Errc::domain, "TCP port out of range: " + std::to_string(port));
  return static_cast<std::uint16_t>(port);
}

inline PortRedirection make_redirection(long long exposed, long long victim) {
  return {checked_port(exposed), checked_port(victim)};
}

/// Largest ordinal representable in the two MAC octets of the naming scheme.
inline constexpr std::uint32_t max_ordinal = 65535;

struct RedirectorSpec {
  std::uint32_t ordinal = 0;
  Ipv4Address ip;
  std::vector<PortRedirection> redirections;

  bool operator==(const RedirectorSpec&) const = default;
};

/// Names and MAC generated for a redirector host. The MAC is locally
/// administered (0x0a first octet) with the ordinal in its last two octets.
struct RedirectorNames {
  std::string ns;
  std::string veth_outer;
  std::string veth_inner;
  MacAddress inner_mac;
};

inline RedirectorNames redirector_names(std::uint32_t ordinal) {
  const auto n = std::to_string(ordinal);
  return {"tlns" + n, "tlv" + n + "b", "tlv" + n + "h",
          MacAddress{{0x0a, 0x74, 0x6c, 0x00, static_cast<std::uint8_t>(ordinal >> 8),
                      static_cast<std::uint8_t>(ordinal)}}};
}

// -- Isolation ---------------------------------------------------------------------

class IsolationPolicy {
public:
  static IsolationPolicy isolated() noexcept { return IsolationPolicy{}; }

  static IsolationPolicy outbound_only(std::string uplink) {
    if (uplink.empty())
      throw Error(Errc::contract, "outbound-only isolation needs an uplink interface");
    if (!valid_interface_name(uplink))
      throw Error(Errc::contract, "invalid uplink interface name '" + uplink + "'");
    IsolationPolicy p;
    p.uplink_ = std::move(uplink);
    return p;
  }

  bool is_isolated() const noexcept { return !uplink_.has_value(); }
  bool allows_outbound() const noexcept { return uplink_.has_value(); }

  /// Empty for the isolated policy.
  const std::string& uplink() const noexcept {
    static const std::string none;
    return uplink_ ? *uplink_ : none;
  }

  std::string to_string() const { return uplink_ ? "outbound " + *uplink_ : "isolated"; }

  bool operator==(const IsolationPolicy&) const = default;

private:
  IsolationPolicy() = default;
  std::optional<std::string> uplink_;
};

// -- Lab configuration ---------------------------------------------------------

struct LabConfig {
  std::string bridge_name;
  MacAddress bridge_mac;
  Ipv4Network network;
  std::array<VmSlot, 3> vm_slots; // indexed by VmRole
  IsolationPolicy isolation = IsolationPolicy::isolated();
  std::vector<RedirectorSpec> redirectors;
  std::set<std::uint16_t> victim_services;
  std::string snapshot_name = "clean";

  const VmSlot& slot(VmRole role) const noexcept { return vm_slots[static_cast<std::size_t>(role)]; }
  VmSlot& slot(VmRole role) noexcept { return vm_slots[static_cast<std::size_t>(role)]; }

  const RedirectorSpec* find_redirector(Ipv4Address ip) const noexcept {
    for (const auto& r : redirectors)
      if (r.ip == ip)
        return &r;
    return nullptr;
  }

  const RedirectorSpec* find_ordinal(std::uint32_t ordinal) const noexcept {
    for (const auto& r : redirectors)
      if (r.ordinal == ordinal)
        return &r;
    return nullptr;
  }

  bool operator==(const LabConfig&) const = default;
};

struct TapSpec {
  std::string name;
  MacAddress mac;
  std::string vm_name; // defaults to the role name when empty
};

/// Builds a config whose VM slots carry the reservations of `network`.
inline LabConfig make_lab_config(std::string bridge_name, MacAddress bridge_mac,
                                 Ipv4Network network, std::array<TapSpec, 3> taps,
                                 IsolationPolicy isolation = IsolationPolicy::isolated()) {
  LabConfig cfg{std::move(bridge_name), bridge_mac, network, {}, std::move(isolation), {}, {}, "clean"};
  for (auto role : all_roles) {
    auto& tap = taps[static_cast<std::size_t>(role)];
    cfg.slot(role) = VmSlot{role, std::move(tap.name), tap.mac, reserved_ip(network, role),
                            tap.vm_name.empty() ? to_string(role) : std::move(tap.vm_name)};
  }
  return cfg;
}

/// Points every VM slot at the reservations of the config's network.
inline void refresh_reservations(LabConfig& cfg) noexcept {
  for (auto role : all_roles)
    cfg.slot(role).reserved_ip = reserved_ip(cfg.network, role);
}

struct SystemInventory {
  std::vector<std::pair<std::string, MacAddress>> interfaces;
  std::vector<Ipv4Network> occupied_networks;
};

// -- Validation --------------------------------------------------------------------

enum class ViolationKind {
  invalid_name,
  name_collision,
  mac_collision,
  network_overlap,
  reservation_mismatch,
  invalid_ordinal,
  duplicate_ordinal,
  redirector_outside_pool,
  duplicate_redirector_ip,
  invalid_port,
  duplicate_exposed_port,
};

inline const char* to_string(ViolationKind kind) noexcept {
  switch (kind) {
    case ViolationKind::invalid_name: return "InvalidName";
    case ViolationKind::name_collision: return "NameCollision";
    case ViolationKind::mac_collision: return "MacCollision";
    case ViolationKind::network_overlap: return "NetworkOverlap";
    case ViolationKind::reservation_mismatch: return "ReservationMismatch";
    case ViolationKind::invalid_ordinal: return "InvalidOrdinal";
    case ViolationKind::duplicate_ordinal: return "DuplicateOrdinal";
    case ViolationKind::redirector_outside_pool: return "RedirectorOutsidePool";
    case ViolationKind::duplicate_redirector_ip: return "DuplicateRedirectorIp";
    case ViolationKind::invalid_port: return "InvalidPort";
    case ViolationKind::duplicate_exposed_port: return "DuplicateExposedPort";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::string value;  // the offending value
  std::string detail;

  std::string to_string() const {
    return std::string(threatlab::to_string(kind)) + "(" + value + "): " + detail;
  }

  bool operator==(const Violation&) const = default;
};

/// Every problem with `config`, in a fixed check order. Empty means valid.
inline std::vector<Violation> validate_config(const LabConfig& config,
                                              const SystemInventory& inventory) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind kind, std::string value, std::string detail) {
    out.push_back({kind, std::move(value), std::move(detail)});
  };

  // Interfaces the lab will create, in creation order.
  std::vector<std::pair<std::string, std::string>> names; // name, owner
  std::vector<std::pair<MacAddress, std::string>> macs;
  names.emplace_back(config.bridge_name, "bridge");
  macs.emplace_back(config.bridge_mac, "bridge");
  for (const auto& slot : config.vm_slots) {
    names.emplace_back(slot.tap_name, std::string(to_string(slot.role)) + " tap");
    macs.emplace_back(slot.tap_mac, std::string(to_string(slot.role)) + " tap");
  }
  for (const auto& r : config.redirectors) {
    if (r.ordinal == 0 || r.ordinal > max_ordinal)
      continue;
    auto gen = redirector_names(r.ordinal);
    const auto owner = "host " + std::to_string(r.ordinal);
    names.emplace_back(gen.veth_outer, owner);
    names.emplace_back(gen.veth_inner, owner);
    macs.emplace_back(gen.inner_mac, owner);
  }

  for (const auto& [name, owner] : names)
    if (!valid_interface_name(name))
      add(ViolationKind::invalid_name, name, owner + " interface name must be 1-15 characters without blanks");
  if (config.isolation.allows_outbound() &&
      std::any_of(names.begin(), names.end(), [&](const auto& n) { return n.first == config.isolation.uplink(); }))
    add(ViolationKind::name_collision, config.isolation.uplink(), "uplink is one of the lab's own interfaces");
  for (const auto& slot : config.vm_slots)
    if (!valid_token(slot.vm_name))
      add(ViolationKind::invalid_name, slot.vm_name, std::string(to_string(slot.role)) + " VM name");
  if (!valid_token(config.snapshot_name))
    add(ViolationKind::invalid_name, config.snapshot_name, "snapshot name");

  {
    std::map<std::string, std::string> seen;
    for (const auto& [name, owner] : names) {
      auto [it, fresh] = seen.emplace(name, owner);
      if (!fresh)
        add(ViolationKind::name_collision, name, owner + " reuses the name of " + it->second);
    }
    for (const auto& [name, owner] : names)
      for (const auto& [host_name, host_mac] : inventory.interfaces)
        if (name == host_name)
          add(ViolationKind::name_collision, name, owner + " matches an existing system interface");
  }
  {
    std::map<MacAddress, std::string> seen;
    for (const auto& [mac, owner] : macs) {
      auto [it, fresh] = seen.emplace(mac, owner);
      if (!fresh)
        add(ViolationKind::mac_collision, mac.to_string(), owner + " reuses the MAC of " + it->second);
    }
    for (const auto& [mac, owner] : macs)
      for (const auto& [host_name, host_mac] : inventory.interfaces)
        if (mac == host_mac)
          add(ViolationKind::mac_collision, mac.to_string(), owner + " matches system interface " + host_name);
  }

  for (const auto& occupied : inventory.occupied_networks)
    if (overlaps(config.network, occupied))
      add(ViolationKind::network_overlap, config.network.to_string(), "overlaps existing network " + occupied.to_string());

  for (auto role : all_roles)
    if (config.slot(role).role != role || config.slot(role).reserved_ip != reserved_ip(config.network, role))
      add(ViolationKind::reservation_mismatch, config.slot(role).reserved_ip.to_string(),
          std::string(to_string(role)) + " must hold " + reserved_ip(config.network, role).to_string());

  std::set<std::uint32_t> ordinals;
  std::set<Ipv4Address> ips;
  for (const auto& r : config.redirectors) {
    const auto who = "host " + std::to_string(r.ordinal);
    if (r.ordinal == 0 || r.ordinal > max_ordinal)
      add(ViolationKind::invalid_ordinal, std::to_string(r.ordinal), "ordinal must be within 1-65535");
    else if (!ordinals.insert(r.ordinal).second)
      add(ViolationKind::duplicate_ordinal, std::to_string(r.ordinal), "ordinal used twice");
    if (!in_pool(config.network, r.ip))
      add(ViolationKind::redirector_outside_pool, r.ip.to_string(), who + " address is not in the available pool");
    else if (!ips.insert(r.ip).second)
      add(ViolationKind::duplicate_redirector_ip, r.ip.to_string(), who + " address already used");
    std::set<std::uint16_t> exposed;
    for (const auto& redir : r.redirections) {
      if (redir.exposed_port == 0 || redir.victim_port == 0) {
        add(ViolationKind::invalid_port,
            std::to_string(redir.exposed_port) + "->" + std::to_string(redir.victim_port),
            who + " ports must be within 1-65535");
        continue;
      }
      if (!exposed.insert(redir.exposed_port).second)
        add(ViolationKind::duplicate_exposed_port, std::to_string(redir.exposed_port),
            who + " exposes the port twice");
    }
  }
  return out;
}

/// Lowest pool address no redirector uses.
inline Ipv4Address allocate_next_ip(const LabConfig& config) {
  std::set<Ipv4Address> used;
  for (const auto& r : config.redirectors)
    used.insert(r.ip);
  const auto n = pool_size(config.network);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto candidate = pool_address(config.network, i);
    if (!used.contains(candidate))
      return candidate;
  }
  throw Error(Errc::capacity, "address pool of " + config.network.to_string() + " is exhausted");
}

} // namespace threatlab
