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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "threatlab/threatlab.hpp"

namespace threatlab::testing {

inline std::string data_file(const std::string& name) {
  std::ifstream in(std::filesystem::path(THREATLAB_TEST_DATA) / name, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline Ipv4Address ip(const char* text) { return Ipv4Address::parse(text); }

/// The three-VM lab on 192.165.15.0/28, built without the config parser.
inline LabConfig small_lab() {
  return make_lab_config("mybridge", MacAddress::parse("00:50:56:c0:aa:01"),
                         derive_network(ip("192.165.15.0"), Netmask::parse("255.255.255.240")),
                         {TapSpec{"tunVictim", MacAddress::parse("00:60:67:34:12:44"), ""},
                          TapSpec{"tunAttacker", MacAddress::parse("00:60:67:34:12:55"), ""},
                          TapSpec{"tunScanner", MacAddress::parse("00:60:67:34:12:66"), ""}});
}

struct Redir {
  std::uint32_t ordinal;
  std::vector<std::pair<int, int>> ports;
};

/// Port map of the deception scenario: host ordinal -> (exposed, victim) pairs.
inline const std::vector<Redir>& deception_map() {
  static const std::vector<Redir> map = {
      {2, {{11, 21}, {22, 22}, {33, 23}}},
      {3, {{44, 23}, {55, 25}, {66, 53}, {77, 80}, {88, 111}}},
      {4, {{99, 139}, {100, 445}, {110, 514}, {120, 514}, {130, 1524}}},
      {5, {{140, 2049}, {150, 2121}, {160, 3306}, {170, 3632}, {180, 5432}}},
  };
  return map;
}

inline std::set<std::uint16_t> deception_services() {
  std::set<std::uint16_t> out;
  for (const auto& r : deception_map())
    for (const auto& [from, to] : r.ports)
      out.insert(static_cast<std::uint16_t>(to));
  return out;
}

/// small_lab() with the deception hosts on .2-.5.
inline LabConfig deception_lab(std::set<std::uint16_t> services) {
  auto cfg = small_lab();
  for (const auto& r : deception_map()) {
    RedirectorSpec spec{r.ordinal, Ipv4Address(cfg.network.address().value() + r.ordinal), {}};
    for (const auto& [from, to] : r.ports)
      spec.redirections.push_back(make_redirection(from, to));
    cfg.redirectors.push_back(spec);
  }
  cfg.victim_services = std::move(services);
  return cfg;
}

inline SimSystem build(const LabConfig& cfg) {
  return apply_plan(SimSystem(cfg.victim_services), compile_network(cfg));
}

// -- Generators ------------------------------------------------------------------

using Rng = std::mt19937_64;

inline int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline MacAddress random_mac(Rng& rng, std::uint8_t first) {
  std::array<std::uint8_t, 6> b{first};
  for (std::size_t i = 1; i < 6; ++i)
    b[i] = static_cast<std::uint8_t>(uniform(rng, 0, 255));
  return MacAddress{b};
}

/// A valid random network with prefix in [lo, hi].
inline Ipv4Network random_network(Rng& rng, int lo = 16, int hi = 29) {
  const int prefix = uniform(rng, lo, hi);
  const auto mask = prefix == 0 ? 0u : ~0u << (32 - prefix);
  const auto base = static_cast<std::uint32_t>(std::uniform_int_distribution<std::uint32_t>()(rng)) & mask;
  return derive_network(Ipv4Address(base), Netmask(mask));
}

/// A valid random lab: random names and MACs, up to `max_hosts` redirectors
/// with random ordinals, addresses and redirections.
inline LabConfig random_lab(Rng& rng, std::size_t max_hosts = 12, int lo = 20, int hi = 29) {
  const auto net = random_network(rng, lo, hi);
  const auto tag = std::to_string(uniform(rng, 0, 999));
  auto cfg = make_lab_config("br" + tag, random_mac(rng, 0x02), net,
                             {TapSpec{"tv" + tag, random_mac(rng, 0x06), ""},
                              TapSpec{"ta" + tag, random_mac(rng, 0x12), ""},
                              TapSpec{"ts" + tag, random_mac(rng, 0x16), ""}});
  if (uniform(rng, 0, 1) == 1)
    cfg.isolation = IsolationPolicy::outbound_only("up" + tag);
  auto pool = available_pool(net);
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto hosts = std::min<std::size_t>(uniform(rng, 0, static_cast<int>(max_hosts)), pool.size());
  std::set<std::uint32_t> ordinals;
  while (ordinals.size() < hosts)
    ordinals.insert(static_cast<std::uint32_t>(uniform(rng, 1, 2000)));
  std::size_t i = 0;
  for (auto ordinal : ordinals) {
    RedirectorSpec spec{ordinal, pool[i++], {}};
    std::set<int> exposed;
    const int n = uniform(rng, 0, 5);
    while (static_cast<int>(exposed.size()) < n)
      exposed.insert(uniform(rng, 1, 65535));
    for (int port : exposed)
      spec.redirections.push_back(make_redirection(port, uniform(rng, 1, 65535)));
    cfg.redirectors.push_back(spec);
  }
  for (int k = uniform(rng, 0, 6); k > 0; --k)
    cfg.victim_services.insert(static_cast<std::uint16_t>(uniform(rng, 1, 65535)));
  return cfg;
}

} // namespace threatlab::testing
