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

#include <gtest/gtest.h>

#include <chrono>
#include <vector>

#include "support.hpp"

namespace threatlab {
namespace {

using testing::ip;

// Usable host addresses of a network, by walking every address it spans.
std::vector<std::uint32_t> enumerate_hosts(std::uint32_t base, int prefix) {
  const std::uint64_t span = std::uint64_t{1} << (32 - prefix);
  std::vector<std::uint32_t> out;
  for (std::uint64_t i = 1; i + 1 < span; ++i)
    out.push_back(static_cast<std::uint32_t>(base + i));
  return out;
}

std::uint32_t mask_bits(int prefix) { return prefix == 0 ? 0u : ~0u << (32 - prefix); }

TEST(Ipv4Address, ParsesAndRenders) {
  EXPECT_EQ(ip("192.165.15.0").value(), 0xc0a50f00u);
  EXPECT_EQ(ip("0.0.0.0").value(), 0u);
  EXPECT_EQ(ip("255.255.255.255").value(), 0xffffffffu);
  EXPECT_EQ(Ipv4Address(0x0a0a0a01).to_string(), "10.10.10.1");
}

TEST(Ipv4Address, RejectsMalformedText) {
  for (const char* bad : {"", "1.2.3", "1.2.3.4.5", "256.1.1.1", "01.2.3.4", "1..2.3", "a.b.c.d", " 1.2.3.4",
                          "1.2.3.4 ", "1.2.3.-4", "1.2.3.4/24"}) {
    try {
      Ipv4Address::parse(bad);
      ADD_FAILURE() << "accepted '" << bad << "'";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::parse) << bad;
    }
  }
}

TEST(Netmask, PrefixLengthOfContiguousMasks) {
  for (int prefix = 0; prefix <= 32; ++prefix) {
    // count leading ones bit by bit
    const auto m = mask_bits(prefix);
    int ones = 0;
    for (int bit = 31; bit >= 0 && (m >> bit & 1u); --bit)
      ++ones;
    EXPECT_EQ(cidr_from_netmask(Netmask(m)), ones);
    EXPECT_EQ(Netmask::from_prefix(prefix).value(), m);
  }
}

TEST(Netmask, RejectsHoles) {
  for (const char* bad : {"255.0.255.0", "255.255.255.241", "0.255.255.255", "255.255.254.1"}) {
    try {
      cidr_from_netmask(Netmask::parse(bad));
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::mask_format) << bad;
    }
  }
}

TEST(DeriveNetwork, ReferenceSlash28) {
  const auto start = std::chrono::steady_clock::now();
  const auto net = derive_network(ip("192.165.15.0"), Netmask::parse("255.255.255.240"));
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_EQ(net.cidr(), 28);
  EXPECT_EQ(net.broadcast(), ip("192.165.15.15"));
  EXPECT_EQ(net.gateway(), ip("192.165.15.1"));
  EXPECT_EQ(net.max_hosts(), 14u);
  EXPECT_LT(elapsed, std::chrono::milliseconds(1));
}

TEST(DeriveNetwork, Slash24) {
  const auto net = derive_network(ip("192.165.15.0"), Netmask::parse("255.255.255.0"));
  EXPECT_EQ(net.cidr(), 24);
  EXPECT_EQ(net.broadcast(), ip("192.165.15.255"));
  EXPECT_EQ(net.max_hosts(), 254u);
}

TEST(DeriveNetwork, Errors) {
  auto code_of = [](const char* addr, const char* mask) {
    try {
      derive_network(ip(addr), Netmask::parse(mask));
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::io;
  };
  EXPECT_EQ(code_of("192.165.15.3", "255.255.255.240"), Errc::alignment);
  EXPECT_EQ(code_of("192.165.15.0", "255.255.255.252"), Errc::network_too_small);
  EXPECT_EQ(code_of("192.165.15.0", "255.255.255.255"), Errc::network_too_small);
  EXPECT_EQ(code_of("192.165.15.0", "255.0.255.0"), Errc::mask_format);
  EXPECT_EQ(code_of("192.165.15.8", "255.255.255.248"), Errc::io); // valid /29
}

TEST(DeriveNetwork, AgreesWithEnumeration) {
  testing::Rng rng(7);
  for (int prefix = 16; prefix <= 29; ++prefix) {
    for (int trial = 0; trial < 8; ++trial) {
      const auto base = static_cast<std::uint32_t>(rng()) & mask_bits(prefix);
      const auto net = derive_network(Ipv4Address(base), Netmask(mask_bits(prefix)));
      const auto hosts = enumerate_hosts(base, prefix);
      ASSERT_EQ(net.max_hosts(), hosts.size());
      EXPECT_EQ(net.gateway().value(), hosts.front());
      EXPECT_EQ(net.broadcast().value(), hosts.back() + 1);
      for (std::uint32_t off : {0u, 1u, static_cast<std::uint32_t>(hosts.size())})
        EXPECT_TRUE(net.contains(Ipv4Address(base + off)));
      EXPECT_FALSE(net.contains(Ipv4Address(base + static_cast<std::uint32_t>(hosts.size()) + 2)));
    }
  }
}

TEST(Reservations, LastThreeUsableAscending) {
  for (int prefix = 16; prefix <= 29; ++prefix) {
    const auto base = 0xc0a50000u & mask_bits(prefix);
    const auto net = derive_network(Ipv4Address(base), Netmask(mask_bits(prefix)));
    const auto hosts = enumerate_hosts(base, prefix);
    const auto r = vm_reservations(net);
    EXPECT_EQ(r.victim.value(), hosts[hosts.size() - 3]);
    EXPECT_EQ(r.attacker.value(), hosts[hosts.size() - 2]);
    EXPECT_EQ(r.scanner.value(), hosts[hosts.size() - 1]);
  }
}

TEST(Reservations, Slash28) {
  const auto net = parse_network("192.165.15.0/28");
  const auto r = vm_reservations(net);
  EXPECT_EQ(r.victim, ip("192.165.15.12"));
  EXPECT_EQ(r.attacker, ip("192.165.15.13"));
  EXPECT_EQ(r.scanner, ip("192.165.15.14"));
}

TEST(Pool, EnumeratedMatchesComputed) {
  for (int prefix = 16; prefix <= 29; ++prefix) {
    const auto base = 0x0a000000u & mask_bits(prefix);
    const auto net = derive_network(Ipv4Address(base), Netmask(mask_bits(prefix)));
    auto hosts = enumerate_hosts(base, prefix);
    // drop the gateway and the three reservations
    std::vector<std::uint32_t> expected(hosts.begin() + 1, hosts.end() - 3);
    const auto pool = available_pool(net);
    ASSERT_EQ(pool.size(), expected.size()) << prefix;
    ASSERT_EQ(pool_size(net), expected.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
      ASSERT_EQ(pool[i].value(), expected[i]);
    for (auto h : hosts)
      EXPECT_EQ(in_pool(net, Ipv4Address(h)), std::binary_search(expected.begin(), expected.end(), h));
    EXPECT_FALSE(in_pool(net, net.address()));
    EXPECT_FALSE(in_pool(net, net.broadcast()));
  }
}

TEST(Pool, KnownLayouts) {
  const auto p28 = available_pool(parse_network("192.165.15.0/28"));
  ASSERT_EQ(p28.size(), 10u);
  EXPECT_EQ(p28.front(), ip("192.165.15.2"));
  EXPECT_EQ(p28.back(), ip("192.165.15.11"));

  const auto p29 = available_pool(parse_network("192.165.15.0/29"));
  ASSERT_EQ(p29.size(), 2u);
  EXPECT_EQ(p29[0], ip("192.165.15.2"));
  EXPECT_EQ(p29[1], ip("192.165.15.3"));
  EXPECT_EQ(vm_reservations(parse_network("192.165.15.0/29")).victim, ip("192.165.15.4"));

  const auto net16 = parse_network("192.165.0.0/16");
  EXPECT_EQ(pool_address(net16, 997), ip("192.165.3.231"));
  EXPECT_EQ(pool_size(net16), 65530u);
}

TEST(Overlap, AgreesWithAddressSets) {
  // every pair of aligned networks inside 10.0.0.0/24 with prefixes 24..29
  std::vector<std::pair<std::uint32_t, int>> nets;
  for (int prefix = 24; prefix <= 29; ++prefix)
    for (std::uint32_t base = 0x0a000000u; base < 0x0a000100u; base += 1u << (32 - prefix))
      nets.emplace_back(base, prefix);
  for (const auto& [ab, ap] : nets) {
    for (const auto& [bb, bp] : nets) {
      bool shared = false;
      for (std::uint64_t x = ab; x < ab + (std::uint64_t{1} << (32 - ap)) && !shared; ++x)
        shared = x >= bb && x < bb + (std::uint64_t{1} << (32 - bp));
      const auto a = derive_network(Ipv4Address(ab), Netmask(mask_bits(ap)));
      const auto b = derive_network(Ipv4Address(bb), Netmask(mask_bits(bp)));
      ASSERT_EQ(overlaps(a, b), shared) << a << " " << b;
    }
  }
}

TEST(ParseNetwork, Errors) {
  EXPECT_THROW(parse_network("10.0.0.0"), Error);
  EXPECT_THROW(parse_network("10.0.0.0/"), Error);
  EXPECT_THROW(parse_network("10.0.0.0/33"), Error);
  EXPECT_THROW(parse_network("10.0.0.0/x"), Error);
  EXPECT_EQ(parse_network("10.10.10.0/24").to_string(), "10.10.10.0/24");
}

} // namespace
} // namespace threatlab
