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

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "threatlab/error.hpp"
#include "threatlab/ipcalc.hpp"
#include "threatlab/model.hpp"
#include "threatlab/plan.hpp"

namespace threatlab {

enum class LinkKind { bridge, tap, veth };

struct SimLink {
  LinkKind kind = LinkKind::veth;
  MacAddress mac;
  std::optional<std::string> ns; // nullopt: default namespace
  std::optional<Ipv4Address> ip;
  int prefix = 0;
  bool up = false;
  bool promiscuous = false;
  std::optional<std::string> master; // bridge this link is attached to
  std::string peer;                  // other end of a veth pair

  bool operator==(const SimLink&) const = default;
};

struct NatKey {
  Ipv4Address ip;
  std::uint16_t port = 0;
  auto operator<=>(const NatKey&) const = default;
};

struct NatTarget {
  std::string ns; // namespace holding the rule
  Ipv4Address ip;
  std::uint16_t port = 0;
  bool operator==(const NatTarget&) const = default;
};

struct DhcpLease {
  Ipv4Address ip;
  VmRole role = VmRole::victim;
  bool operator==(const DhcpLease&) const = default;
};

// -- Traffic ---------------------------------------------------------------------

enum class FrameKind { arp_probe, tcp_syn, tcp_reply };
enum class Verdict { delivered, blocked, refused };

inline const char* to_string(FrameKind kind) noexcept {
  switch (kind) {
    case FrameKind::arp_probe: return "arp-probe";
    case FrameKind::tcp_syn: return "tcp-syn";
    case FrameKind::tcp_reply: return "tcp-reply";
  }
  return "?";
}

inline const char* to_string(Verdict verdict) noexcept {
  switch (verdict) {
    case Verdict::delivered: return "delivered";
    case Verdict::blocked: return "blocked";
    case Verdict::refused: return "refused";
  }
  return "?";
}

/// One synthetic packet seen on the bridge. Ports are zero for ARP probes.
struct Frame {
  Ipv4Address src_ip;
  std::uint16_t src_port = 0;
  Ipv4Address dst_ip;
  std::uint16_t dst_port = 0;
  FrameKind kind = FrameKind::arp_probe;
  Verdict verdict = Verdict::delivered;

  bool operator==(const Frame&) const = default;
};

/// "tcp-syn 192.165.15.13:32768 -> 192.165.15.2:11 delivered"
inline std::string to_text(const Frame& f) {
  auto side = [&](Ipv4Address ip, std::uint16_t port) {
    return f.kind == FrameKind::arp_probe ? ip.to_string() : ip.to_string() + ":" + std::to_string(port);
  };
  return std::string(to_string(f.kind)) + " " + side(f.src_ip, f.src_port) + " -> " +
         side(f.dst_ip, f.dst_port) + " " + to_string(f.verdict);
}

inline Frame parse_frame(std::string_view line) {
  auto fail = [&] { return Error(Errc::parse, "malformed frame line '" + std::string(line) + "'"); };
  std::vector<std::string_view> tok;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    auto end = std::min(line.find(' ', pos), line.size());
    if (end > pos)
      tok.push_back(line.substr(pos, end - pos));
    pos = end + 1;
  }
  if (tok.size() != 5 || tok[2] != "->")
    throw fail();
  Frame f;
  if (tok[0] == "arp-probe") f.kind = FrameKind::arp_probe;
  else if (tok[0] == "tcp-syn") f.kind = FrameKind::tcp_syn;
  else if (tok[0] == "tcp-reply") f.kind = FrameKind::tcp_reply;
  else throw fail();
  if (tok[4] == "delivered") f.verdict = Verdict::delivered;
  else if (tok[4] == "blocked") f.verdict = Verdict::blocked;
  else if (tok[4] == "refused") f.verdict = Verdict::refused;
  else throw fail();
  auto side = [&](std::string_view text, Ipv4Address& ip, std::uint16_t& port) {
    if (f.kind == FrameKind::arp_probe) {
      ip = Ipv4Address::parse(text);
      return;
    }
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos)
      throw fail();
    ip = Ipv4Address::parse(text.substr(0, colon));
    unsigned value = 0;
    auto digits = text.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size() || value > 65535)
      throw fail();
    port = static_cast<std::uint16_t>(value);
  };
  side(tok[1], f.src_ip, f.src_port);
  side(tok[3], f.dst_ip, f.dst_port);
  return f;
}

enum class PortState { open, closed, filtered };

inline const char* to_string(PortState state) noexcept {
  switch (state) {
    case PortState::open: return "open";
    case PortState::closed: return "closed";
    case PortState::filtered: return "filtered";
  }
  return "?";
}

enum class HostState { up, down };
enum class Direction { outbound, inbound };
enum class ExternalVerdict { allowed, blocked };

struct Endpoint {
  Ipv4Address ip;
  std::uint16_t port = 0;
  bool operator==(const Endpoint&) const = default;
};

struct ScanResult {
  HostState host = HostState::down;
  std::map<std::uint16_t, PortState> ports; // empty when the host is down
};

// -- System model ----------------------------------------------------------------

/// In-memory stand-in for the host kernel: links, namespaces, the lab bridge,
/// NAT rules inside redirector namespaces, firewall policy, port mirroring,
/// ARP filtering and DHCP reservations. Traffic queries append to the capture
/// log, which models what the mirrored scanner port sees.
class SimSystem {
public:
  explicit SimSystem(std::set<std::uint16_t> victim_services = {})
      : victim_services_(std::move(victim_services)) {}

  // -- state ----------------------------------------------------------------

  const std::map<std::string, SimLink>& links() const noexcept { return links_; }
  const std::set<std::string>& namespaces() const noexcept { return namespaces_; }
  const std::optional<std::string>& bridge() const noexcept { return bridge_; }
  std::set<std::string> bridge_members() const {
    std::set<std::string> out;
    for (const auto& [name, link] : links_)
      if (link.master && link.master == bridge_)
        out.insert(name);
    return out;
  }
  const std::map<NatKey, NatTarget>& nat_table() const noexcept { return nat_; }
  const IsolationPolicy& isolation() const noexcept { return isolation_; }
  const std::optional<std::string>& mirror_target() const noexcept { return mirror_target_; }
  const std::set<std::string>& arp_filter() const noexcept { return arp_filter_; }
  const std::map<MacAddress, DhcpLease>& dhcp_reservations() const noexcept { return dhcp_; }
  const std::set<std::uint16_t>& victim_services() const noexcept { return victim_services_; }
  void set_victim_services(std::set<std::uint16_t> ports) { victim_services_ = std::move(ports); }
  const std::vector<Frame>& capture_log() const noexcept { return capture_log_; }
  void set_capture_log(std::vector<Frame> frames) { capture_log_ = std::move(frames); }
  unsigned restore_count(VmRole role) const noexcept { return restores_[static_cast<std::size_t>(role)]; }

  const SimLink* find_link(const std::string& name) const {
    auto it = links_.find(name);
    return it == links_.end() ? nullptr : &it->second;
  }

  /// Artifacts that exist now, for checking a plan before applying it.
  PlanContext plan_context() const {
    PlanContext ctx;
    for (const auto& [name, link] : links_) {
      ctx.links.emplace(name, link.ns);
      if (!link.peer.empty())
        ctx.veth_peers.emplace(name, link.peer);
    }
    ctx.namespaces = namespaces_;
    ctx.bridge = bridge_;
    return ctx;
  }

  /// Structural invariants; returns a description of each breach.
  std::vector<std::string> invariant_violations() const {
    std::vector<std::string> out;
    for (const auto& [name, link] : links_) {
      if (link.master && (!bridge_ || *link.master != *bridge_))
        out.push_back(name + " attached to missing bridge " + *link.master);
      if (link.ns && !namespaces_.contains(*link.ns))
        out.push_back(name + " lives in missing namespace " + *link.ns);
      if (!link.peer.empty() && (!links_.contains(link.peer) || links_.at(link.peer).peer != name))
        out.push_back(name + " has a dangling veth peer");
    }
    if (mirror_target_) {
      auto it = links_.find(*mirror_target_);
      if (it == links_.end() || it->second.master != bridge_)
        out.push_back("mirror target " + *mirror_target_ + " not attached to the bridge");
    }
    for (const auto& name : arp_filter_)
      if (!links_.contains(name))
        out.push_back("ARP filter on missing link " + name);
    return out;
  }

  bool operator==(const SimSystem&) const = default;

  // -- plan application -------------------------------------------------------

  /// Applies one op; `index` only labels errors.
  void apply(const BackendOp& op, std::size_t index) {
    auto conflict = [&](const std::string& why) { return ApplyError(Errc::conflict, index, why); };
    auto missing = [&](const std::string& why) { return ApplyError(Errc::missing, index, why); };
    auto link_in = [&](const std::string& name, const std::optional<std::string>& ns) -> SimLink& {
      auto it = links_.find(name);
      if (it == links_.end() || it->second.ns != ns)
        throw missing("no link " + name + (ns ? " in namespace " + *ns : std::string{}));
      return it->second;
    };
    auto fresh_name = [&](const std::string& name) {
      if (links_.contains(name))
        throw conflict("link " + name + " exists");
    };
    auto bridge_named = [&](const std::string& name) {
      if (bridge_ != name)
        throw missing("no bridge " + name);
    };

    std::visit(
        overloaded{
            [&](const ops::CreateBridge& o) {
              if (bridge_)
                throw conflict("bridge " + *bridge_ + " exists");
              fresh_name(o.name);
              index_address(o.gateway, o.name, index);
              links_[o.name] = SimLink{LinkKind::bridge, o.mac, std::nullopt, o.gateway, o.prefix, true, false, std::nullopt, {}};
              bridge_ = o.name;
            },
            [&](const ops::DeleteBridge& o) {
              bridge_named(o.name);
              for (auto& [name, link] : links_)
                if (link.master == o.name)
                  link.master.reset();
              drop_link(o.name);
              bridge_.reset();
              mirror_target_.reset();
            },
            [&](const ops::CreateTap& o) {
              fresh_name(o.name);
              if (taps_by_mac_.contains(o.mac))
                throw conflict("tap MAC " + o.mac.to_string() + " in use");
              links_[o.name] = SimLink{LinkKind::tap, o.mac, std::nullopt, std::nullopt, 0, true, false, std::nullopt, {}};
              taps_by_mac_[o.mac] = o.name;
            },
            [&](const ops::DeleteTap& o) {
              auto& link = link_in(o.name, std::nullopt);
              if (link.kind != LinkKind::tap)
                throw missing(o.name + " is not a tap");
              if (mirror_target_ == o.name)
                mirror_target_.reset();
              arp_filter_.erase(o.name);
              drop_link(o.name);
            },
            [&](const ops::AttachToBridge& o) {
              bridge_named(o.bridge);
              auto& link = link_in(o.link, std::nullopt);
              if (o.link == o.bridge)
                throw conflict("cannot attach a bridge to itself");
              if (link.master)
                throw conflict(o.link + " already attached to " + *link.master);
              link.master = o.bridge;
            },
            [&](const ops::SetPromiscuous& o) { link_in(o.link, std::nullopt).promiscuous = true; },
            [&](const ops::EnableMirroring& o) {
              bridge_named(o.bridge);
              if (link_in(o.target, std::nullopt).master != o.bridge)
                throw missing("mirror target " + o.target + " is not attached to " + o.bridge);
              if (mirror_target_)
                throw conflict("mirroring already targets " + *mirror_target_);
              mirror_target_ = o.target;
            },
            [&](const ops::DisableMirroring& o) {
              bridge_named(o.bridge);
              if (!mirror_target_)
                throw missing("mirroring is not enabled");
              mirror_target_.reset();
            },
            [&](const ops::BlockArpExceptBridge& o) {
              link_in(o.link, std::nullopt);
              if (!arp_filter_.insert(o.link).second)
                throw conflict("ARP filter on " + o.link + " exists");
            },
            [&](const ops::UnblockArp& o) {
              if (arp_filter_.erase(o.link) == 0)
                throw missing("no ARP filter on " + o.link);
            },
            [&](const ops::ReserveDhcp& o) {
              if (dhcp_.contains(o.mac))
                throw conflict("DHCP reservation for " + o.mac.to_string() + " exists");
              if (dhcp_by_ip_.contains(o.ip))
                throw conflict("DHCP reservation for " + o.ip.to_string() + " exists");
              dhcp_[o.mac] = DhcpLease{o.ip, o.role};
              dhcp_by_ip_[o.ip] = o.mac;
            },
            [&](const ops::ReleaseDhcp& o) {
              auto it = dhcp_.find(o.mac);
              if (it == dhcp_.end())
                throw missing("no DHCP reservation for " + o.mac.to_string());
              dhcp_by_ip_.erase(it->second.ip);
              dhcp_.erase(it);
            },
            [&](const ops::CreateNamespace& o) {
              if (!namespaces_.insert(o.name).second)
                throw conflict("namespace " + o.name + " exists");
            },
            [&](const ops::RemoveNamespace& o) {
              if (!namespaces_.contains(o.name))
                throw missing("no namespace " + o.name);
              std::vector<std::string> inside;
              for (const auto& [name, link] : links_)
                if (link.ns == o.name)
                  inside.push_back(name);
              for (const auto& name : inside) {
                if (!links_.contains(name))
                  continue;
                const auto peer = links_.at(name).peer;
                drop_link(name);
                if (!peer.empty() && links_.contains(peer))
                  drop_link(peer);
              }
              std::erase_if(nat_, [&](const auto& entry) { return entry.second.ns == o.name; });
              namespaces_.erase(o.name);
            },
            [&](const ops::CreateVethPair& o) {
              fresh_name(o.outer);
              fresh_name(o.inner);
              if (o.outer == o.inner)
                throw conflict("veth ends share the name " + o.outer);
              links_[o.outer] = SimLink{LinkKind::veth, MacAddress{}, std::nullopt, std::nullopt, 0, false, false,
                                        std::nullopt, o.inner};
              links_[o.inner] = SimLink{LinkKind::veth, o.inner_mac, std::nullopt, std::nullopt, 0, false, false,
                                        std::nullopt, o.outer};
            },
            [&](const ops::MoveToNamespace& o) {
              auto& link = link_in(o.link, std::nullopt);
              if (!namespaces_.contains(o.ns))
                throw missing("no namespace " + o.ns);
              if (link.kind != LinkKind::veth)
                throw conflict(o.link + " cannot leave the default namespace");
              if (link.master)
                throw conflict(o.link + " is attached to " + *link.master);
              link.ns = o.ns;
            },
            [&](const ops::AssignAddress& o) {
              if (o.ns && !namespaces_.contains(*o.ns))
                throw missing("no namespace " + *o.ns);
              auto& link = link_in(o.link, o.ns);
              if (link.ip)
                throw conflict(o.link + " already has address " + link.ip->to_string());
              index_address(o.ip, o.link, index);
              link.ip = o.ip;
              link.prefix = o.prefix;
            },
            [&](const ops::LinkUp& o) {
              if (o.ns && !namespaces_.contains(*o.ns))
                throw missing("no namespace " + *o.ns);
              link_in(o.link, o.ns).up = true;
            },
            [&](const ops::AddDnat& o) {
              if (!namespaces_.contains(o.ns))
                throw missing("no namespace " + o.ns);
              auto owner = address_index_.find(o.from_ip);
              if (owner == address_index_.end() || links_.at(owner->second).ns != o.ns)
                throw missing(o.from_ip.to_string() + " is not an address of namespace " + o.ns);
              if (!nat_.emplace(NatKey{o.from_ip, o.from_port}, NatTarget{o.ns, o.to_ip, o.to_port}).second)
                throw conflict("NAT rule for " + o.from_ip.to_string() + ":" + std::to_string(o.from_port) + " exists");
            },
            [&](const ops::RemoveDnat& o) {
              auto it = nat_.find(NatKey{o.from_ip, o.from_port});
              if (it == nat_.end() || it->second != NatTarget{o.ns, o.to_ip, o.to_port})
                throw missing("no NAT rule " + o.from_ip.to_string() + ":" + std::to_string(o.from_port) + " in " + o.ns);
              nat_.erase(it);
            },
            [&](const ops::SetIsolation& o) { isolation_ = o.policy; },
            [&](const ops::RestoreVmSnapshot& o) { ++restores_[static_cast<std::size_t>(o.role)]; },
        },
        op);
  }

  // -- traffic ------------------------------------------------------------------

  HostState probe_host(Ipv4Address src, Ipv4Address target) {
    const auto from = require_source(src);
    const auto to = resolve(target);
    const bool up = to.kind != EndpointKind::none && visible(from, to);
    log({src, 0, target, 0, FrameKind::arp_probe, up ? Verdict::delivered : Verdict::blocked});
    return up ? HostState::up : HostState::down;
  }

  ScanResult scan_ports(Ipv4Address src, Ipv4Address target, std::uint16_t first, std::uint16_t last) {
    ScanResult result;
    result.host = probe_host(src, target);
    if (result.host == HostState::down)
      return result;
    const auto from = require_source(src);
    for (std::uint32_t port = first; port <= last; ++port)
      result.ports[static_cast<std::uint16_t>(port)] =
          connect(from, src, target, static_cast<std::uint16_t>(port)).state;
    return result;
  }

  /// Where a TCP connection to `dst:dst_port` ends up, or nullopt if refused.
  std::optional<Endpoint> resolve_connection(Ipv4Address src, Ipv4Address dst, std::uint16_t dst_port) {
    const auto from = require_source(src);
    return connect(from, src, dst, dst_port).endpoint;
  }

  ExternalVerdict check_external(Direction direction) const noexcept {
    if (direction == Direction::outbound && isolation_.allows_outbound())
      return ExternalVerdict::allowed;
    return ExternalVerdict::blocked;
  }

  const std::vector<Frame>& capture() const {
    if (!mirror_target_)
      throw Error(Errc::configuration, "port mirroring is not enabled");
    return capture_log_;
  }

private:
  enum class EndpointKind { none, gateway, vm, redirector };

  struct Resolved {
    EndpointKind kind = EndpointKind::none;
    VmRole role = VmRole::victim;
    std::string ns;
    bool arp_filtered = false;
  };

  struct Outcome {
    PortState state;
    std::optional<Endpoint> endpoint;
  };

  void index_address(Ipv4Address ip, const std::string& name, std::size_t index) {
    if (!address_index_.emplace(ip, name).second)
      throw ApplyError(Errc::conflict, index, "address " + ip.to_string() + " already assigned");
  }

  void drop_link(const std::string& name) {
    auto it = links_.find(name);
    if (it->second.ip)
      address_index_.erase(*it->second.ip);
    if (it->second.kind == LinkKind::tap)
      taps_by_mac_.erase(it->second.mac);
    if (mirror_target_ == name)
      mirror_target_.reset();
    arp_filter_.erase(name);
    links_.erase(it);
  }

  bool attached_and_up(const SimLink& link) const {
    return link.up && link.master && link.master == bridge_;
  }

  Resolved resolve(Ipv4Address ip) const {
    if (bridge_) {
      const auto& br = links_.at(*bridge_);
      if (br.up && br.ip == ip)
        return {EndpointKind::gateway, VmRole::victim, {}, false};
    }
    if (auto lease = dhcp_by_ip_.find(ip); lease != dhcp_by_ip_.end()) {
      if (auto tap = taps_by_mac_.find(lease->second); tap != taps_by_mac_.end()) {
        if (attached_and_up(links_.at(tap->second)))
          return {EndpointKind::vm, dhcp_.at(lease->second).role, {}, arp_filter_.contains(tap->second)};
      }
    }
    if (auto owner = address_index_.find(ip); owner != address_index_.end()) {
      const auto& link = links_.at(owner->second);
      if (link.ns && link.up && !link.peer.empty()) {
        auto peer = links_.find(link.peer);
        if (peer != links_.end() && attached_and_up(peer->second))
          return {EndpointKind::redirector, VmRole::victim, *link.ns, false};
      }
    }
    return {};
  }

  // ARP-filtered endpoints only talk to the bridge.
  static bool visible(const Resolved& a, const Resolved& b) {
    if (a.arp_filtered && b.kind != EndpointKind::gateway)
      return false;
    if (b.arp_filtered && a.kind != EndpointKind::gateway)
      return false;
    return true;
  }

  Resolved require_source(Ipv4Address src) const {
    auto from = resolve(src);
    if (from.kind == EndpointKind::none)
      throw Error(Errc::contract, src.to_string() + " is not an endpoint of the lab network");
    return from;
  }

  std::uint16_t ephemeral_port() const noexcept {
    return static_cast<std::uint16_t>(32768 + capture_log_.size() % 28232);
  }

  void log(const Frame& frame) { capture_log_.push_back(frame); }

  Outcome connect(const Resolved& from, Ipv4Address src, Ipv4Address dst, std::uint16_t port) {
    const auto sport = ephemeral_port();
    const auto to = resolve(dst);
    auto syn = [&](Verdict v) { log({src, sport, dst, port, FrameKind::tcp_syn, v}); };
    if (to.kind == EndpointKind::none || !visible(from, to)) {
      syn(Verdict::blocked);
      return {PortState::filtered, std::nullopt};
    }
    if (to.kind == EndpointKind::redirector) {
      auto rule = nat_.find(NatKey{dst, port});
      if (rule == nat_.end() || rule->second.ns != to.ns) {
        syn(Verdict::refused);
        return {PortState::closed, std::nullopt};
      }
      syn(Verdict::delivered);
      // The namespace rewrites the destination and masquerades the source.
      const auto& target = rule->second;
      const auto victim = resolve(target.ip);
      const bool listening = victim.kind == EndpointKind::vm && victim.role == VmRole::victim &&
                             visible(to, victim) && victim_services_.contains(target.port);
      if (!listening) {
        log({dst, sport, target.ip, target.port, FrameKind::tcp_syn, Verdict::blocked});
        return {PortState::filtered, std::nullopt};
      }
      log({dst, sport, target.ip, target.port, FrameKind::tcp_syn, Verdict::delivered});
      log({target.ip, target.port, dst, sport, FrameKind::tcp_reply, Verdict::delivered});
      log({dst, port, src, sport, FrameKind::tcp_reply, Verdict::delivered});
      return {PortState::open, Endpoint{target.ip, target.port}};
    }
    if (to.kind == EndpointKind::vm && to.role == VmRole::victim && victim_services_.contains(port)) {
      syn(Verdict::delivered);
      log({dst, port, src, sport, FrameKind::tcp_reply, Verdict::delivered});
      return {PortState::open, Endpoint{dst, port}};
    }
    syn(Verdict::refused);
    return {PortState::closed, std::nullopt};
  }

  std::map<std::string, SimLink> links_;
  std::set<std::string> namespaces_;
  std::optional<std::string> bridge_;
  std::map<NatKey, NatTarget> nat_;
  IsolationPolicy isolation_ = IsolationPolicy::isolated();
  std::optional<std::string> mirror_target_;
  std::set<std::string> arp_filter_;
  std::map<MacAddress, DhcpLease> dhcp_;
  std::set<std::uint16_t> victim_services_;
  std::vector<Frame> capture_log_;
  std::array<unsigned, 3> restores_{};

  // lookup indexes, kept in step with the tables above
  std::map<Ipv4Address, std::string> address_index_;
  std::map<Ipv4Address, MacAddress> dhcp_by_ip_;
  std::map<MacAddress, std::string> taps_by_mac_;
};

/// Applies `plan` in order to a copy of `state`. The first failing op raises an
/// ApplyError naming its index; `state` itself is never modified.
inline SimSystem apply_plan(SimSystem state, const Plan& plan) {
  for (std::size_t i = 0; i < plan.size(); ++i)
    state.apply(plan[i], i);
  return state;
}

} // namespace threatlab
