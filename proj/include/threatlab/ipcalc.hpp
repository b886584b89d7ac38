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
#include <bit>
#include <charconv>
#include <compare>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "threatlab/error.hpp"

namespace threatlab {

namespace detail {

// Parses exactly four dot-separated decimal octets.
inline std::uint32_t parse_dotted_quad(std::string_view text) {
  auto fail = [&] {
    return Error(Errc::parse, "malformed IPv4 address '" + std::string(text) + "'");
  };
  std::uint32_t value = 0;
  int parts = 0;
  std::size_t pos = 0;
  while (true) {
    const auto dot = text.find('.', pos);
    const auto part = text.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
    unsigned octet = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), octet);
    if (part.empty() || part.size() > 3 || ec != std::errc{} ||
        ptr != part.data() + part.size() || octet > 255 ||
        (part.size() > 1 && part.front() == '0') || ++parts > 4)
      throw fail();
    value = (value << 8) | octet;
    if (dot == std::string_view::npos)
      break;
    pos = dot + 1;
  }
  if (parts != 4)
    throw fail();
  return value;
}

inline std::string render_dotted_quad(std::uint32_t value) {
  std::string out;
  out.reserve(15);
  for (int shift = 24; shift >= 0; shift -= 8) {
    out += std::to_string((value >> shift) & 0xffu);
    if (shift != 0)
      out += '.';
  }
  return out;
}

} // namespace detail

/// An IPv4 address held in host byte order.
class Ipv4Address {
public:
  constexpr Ipv4Address() noexcept = default;
  constexpr explicit Ipv4Address(std::uint32_t value) noexcept : value_(value) {}

  static Ipv4Address parse(std::string_view text) {
    return Ipv4Address{detail::parse_dotted_quad(text)};
  }

  constexpr std::uint32_t value() const noexcept { return value_; }

  std::array<std::uint8_t, 4> octets() const noexcept {
    return {static_cast<std::uint8_t>(value_ >> 24),
            static_cast<std::uint8_t>(value_ >> 16),
            static_cast<std::uint8_t>(value_ >> 8),
            static_cast<std::uint8_t>(value_)};
  }

  std::string to_string() const { return detail::render_dotted_quad(value_); }

  constexpr Ipv4Address operator+(std::uint32_t offset) const noexcept {
    return Ipv4Address{value_ + offset};
  }

  constexpr auto operator<=>(const Ipv4Address&) const noexcept = default;

private:
  std::uint32_t value_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, const Ipv4Address& addr) {
  return os << addr.to_string();
}

/// Raw netmask bits. Contiguity is checked by `cidr_from_netmask`, which every
/// network-deriving path goes through.
class Netmask {
public:
  constexpr Netmask() noexcept = default;
  constexpr explicit Netmask(std::uint32_t bits) noexcept : bits_(bits) {}

  static Netmask parse(std::string_view text) {
    return Netmask{detail::parse_dotted_quad(text)};
  }

  static Netmask from_prefix(int prefix) {
    if (prefix < 0 || prefix > 32)
      throw Error(Errc::mask_format, "prefix length out of range: " + std::to_string(prefix));
    return Netmask{prefix == 0 ? 0u : ~std::uint32_t{0} << (32 - prefix)};
  }

  constexpr std::uint32_t value() const noexcept { return bits_; }
  std::string to_string() const { return detail::render_dotted_quad(bits_); }

  constexpr auto operator<=>(const Netmask&) const noexcept = default;

private:
  std::uint32_t bits_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, const Netmask& mask) {
  return os << mask.to_string();
}

/// Prefix length of a contiguous mask.
inline int cidr_from_netmask(Netmask mask) {
  const std::uint32_t bits = mask.value();
  const int ones = std::popcount(bits);
  // contiguous iff the inverted mask is of the form 0...01...1
  const std::uint32_t host = ~bits;
  if ((host & (host + 1)) != 0)
    throw Error(Errc::mask_format, "non-contiguous netmask " + mask.to_string());
  return ones;
}

/// A validated network. Only `derive_network` constructs one, so every
/// instance satisfies the derived-field invariants.
class Ipv4Network {
public:
  Ipv4Address address() const noexcept { return address_; }
  Netmask netmask() const noexcept { return netmask_; }
  int cidr() const noexcept { return cidr_; }
  Ipv4Address broadcast() const noexcept { return Ipv4Address{address_.value() | ~netmask_.value()}; }
  Ipv4Address gateway() const noexcept { return address_ + 1; }
  std::uint32_t max_hosts() const noexcept {
    return static_cast<std::uint32_t>((std::uint64_t{1} << (32 - cidr_)) - 2);
  }

  bool contains(Ipv4Address addr) const noexcept {
    return (addr.value() & netmask_.value()) == address_.value();
  }

  /// "a.b.c.d/n"
  std::string to_string() const { return address_.to_string() + "/" + std::to_string(cidr_); }

  bool operator==(const Ipv4Network&) const noexcept = default;

private:
  friend Ipv4Network derive_network(Ipv4Address, Netmask);

  Ipv4Network(Ipv4Address address, Netmask netmask, int cidr) noexcept
      : address_(address), netmask_(netmask), cidr_(cidr) {}

  Ipv4Address address_;
  Netmask netmask_;
  int cidr_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, const Ipv4Network& net) {
  return os << net.to_string();
}

/// Smallest number of usable hosts a lab network must offer: the gateway
/// plus one address per VM role.
inline constexpr std::uint32_t min_lab_hosts = 4;

inline Ipv4Network derive_network(Ipv4Address address, Netmask mask) {
  const int cidr = cidr_from_netmask(mask);
  if ((address.value() & ~mask.value()) != 0)
    throw Error(Errc::alignment, "host bits set in network address " + address.to_string() +
                                     "/" + std::to_string(cidr));
  if (cidr > 30 || (std::uint64_t{1} << (32 - cidr)) - 2 < min_lab_hosts)
    throw Error(Errc::network_too_small,
                address.to_string() + "/" + std::to_string(cidr) + " has fewer than " +
                    std::to_string(min_lab_hosts) + " usable hosts");
  return Ipv4Network{address, mask, cidr};
}

/// Parses "a.b.c.d/n".
inline Ipv4Network parse_network(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos)
    throw Error(Errc::parse, "expected address/prefix, got '" + std::string(text) + "'");
  auto prefix_text = text.substr(slash + 1);
  int prefix = -1;
  auto [ptr, ec] = std::from_chars(prefix_text.data(), prefix_text.data() + prefix_text.size(), prefix);
  if (prefix_text.empty() || ec != std::errc{} || ptr != prefix_text.data() + prefix_text.size())
    throw Error(Errc::parse, "malformed prefix in '" + std::string(text) + "'");
  return derive_network(Ipv4Address::parse(text.substr(0, slash)), Netmask::from_prefix(prefix));
}

struct VmReservations {
  Ipv4Address victim;
  Ipv4Address attacker;
  Ipv4Address scanner;

  bool operator==(const VmReservations&) const noexcept = default;
};

/// The three highest usable addresses, ascending: victim, attacker, scanner.
inline VmReservations vm_reservations(const Ipv4Network& net) noexcept {
  const Ipv4Address last = Ipv4Address{net.broadcast().value() - 1};
  return {Ipv4Address{last.value() - 2}, Ipv4Address{last.value() - 1}, last};
}

/// Number of addresses left for redirector hosts once the gateway and the
/// VM reservations are taken.
inline std::uint32_t pool_size(const Ipv4Network& net) noexcept {
  return net.max_hosts() - min_lab_hosts;
}

/// Pool address at `index`; `index` must be below `pool_size(net)`.
inline Ipv4Address pool_address(const Ipv4Network& net, std::uint32_t index) noexcept {
  return net.address() + (2 + index);
}

inline bool in_pool(const Ipv4Network& net, Ipv4Address addr) noexcept {
  const auto first = net.address().value() + 2;
  return addr.value() >= first && addr.value() - first < pool_size(net);
}

/// Every pool address, ascending.
inline std::vector<Ipv4Address> available_pool(const Ipv4Network& net) {
  std::vector<Ipv4Address> pool;
  const auto n = pool_size(net);
  pool.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i)
    pool.push_back(pool_address(net, i));
  return pool;
}

inline bool overlaps(const Ipv4Network& a, const Ipv4Network& b) noexcept {
  return a.address() <= b.broadcast() && b.address() <= a.broadcast();
}

} // namespace threatlab
