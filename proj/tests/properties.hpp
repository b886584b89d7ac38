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

// Randomized properties shared by the unit tests and the acceptance run. Each
// check throws PropertyFailure naming the first counterexample.

#pragma once

#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "support.hpp"

namespace threatlab::properties {

struct PropertyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define TL_PROPERTY(cond, msg)                                                              \
  do {                                                                                      \
    if (!(cond)) {                                                                          \
      std::ostringstream tl_os_;                                                            \
      tl_os_ << __FILE__ << ":" << __LINE__ << ": " << #cond << " " << msg;                 \
      throw ::threatlab::properties::PropertyFailure(tl_os_.str());                         \
    }                                                                                       \
  } while (false)

using testing::Rng;
using testing::uniform;

inline std::size_t redirection_count(const LabConfig& cfg) {
  std::size_t n = 0;
  for (const auto& r : cfg.redirectors)
    n += r.redirections.size();
  return n;
}

using Triple = std::tuple<std::uint32_t, std::uint16_t, std::uint16_t>;

inline std::multiset<Triple> triples(const LabConfig& cfg) {
  std::multiset<Triple> out;
  for (const auto& r : cfg.redirectors)
    for (const auto& p : r.redirections)
      out.emplace(r.ordinal, p.exposed_port, p.victim_port);
  return out;
}

// NAT table a correct build must have, straight from the config.
inline std::map<NatKey, NatTarget> expected_nat(const LabConfig& cfg) {
  std::map<NatKey, NatTarget> out;
  for (const auto& r : cfg.redirectors)
    for (const auto& p : r.redirections)
      out[NatKey{r.ip, p.exposed_port}] =
          NatTarget{"tlns" + std::to_string(r.ordinal), cfg.slot(VmRole::victim).reserved_ip, p.victim_port};
  return out;
}

inline void compiled_plans_are_ordered_and_counted() {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto cfg = testing::random_lab(rng);
    const auto plan = compile_network(cfg);
    const auto problems = ordering_violations(plan);
    TL_PROPERTY(problems.empty(), problems.front() << "\n" << render_lab_config(cfg));
    TL_PROPERTY((plan.size()) == (14 + 7 * cfg.redirectors.size() + redirection_count(cfg)), "");
    TL_PROPERTY((to_text(plan)) == (to_text(compile_network(cfg))), "");
  }
}

inline void built_system_matches_config() {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    const auto cfg = testing::random_lab(rng);
    const auto sim = testing::build(cfg);
    TL_PROPERTY(sim.invariant_violations().empty(), "");
    TL_PROPERTY((sim.nat_table()) == (expected_nat(cfg)), "");
    TL_PROPERTY((sim.namespaces().size()) == (cfg.redirectors.size()), "");
    TL_PROPERTY((sim.bridge_members().size()) == (3 + cfg.redirectors.size()), "");
    TL_PROPERTY((sim.mirror_target()) == (cfg.slot(VmRole::scanner).tap_name), "");
  }
}

inline void incremental_plans_are_ordered_against_the_system() {
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    auto cfg = testing::random_lab(rng, 6);
    auto sim = testing::build(cfg);
    for (int step = 0; step < 5; ++step) {
      const auto pool = available_pool(cfg.network);
      if (cfg.redirectors.size() == pool.size())
        break;
      const auto addr = allocate_next_ip(cfg);
      std::uint32_t ordinal = 1;
      while (cfg.find_ordinal(ordinal) != nullptr)
        ++ordinal;
      auto plan = plan_add_host(cfg, addr, ordinal);
      TL_PROPERTY(ordering_violations(plan, sim.plan_context()).empty(), "");
      sim = apply_plan(std::move(sim), plan);
      cfg.redirectors.push_back({ordinal, addr, {}});
      const auto port = uniform(rng, 1, 65535);
      plan = plan_redirect(cfg, addr, port, cfg.slot(VmRole::victim).reserved_ip, 80);
      TL_PROPERTY(ordering_violations(plan, sim.plan_context()).empty(), "");
      sim = apply_plan(std::move(sim), plan);
      cfg.redirectors.back().redirections.push_back(make_redirection(port, 80));
    }
    TL_PROPERTY((sim.nat_table()) == (expected_nat(cfg)), "");
    TL_PROPERTY((sim) == (testing::build(cfg)), "");
  }
}

inline void scanner_invisible() {
  Rng rng(4);
  for (int i = 0; i < 40; ++i) {
    const auto cfg = testing::random_lab(rng, 20, 24, 28);
    auto sim = testing::build(cfg);
    const auto scanner = cfg.slot(VmRole::scanner).reserved_ip;
    std::vector<Ipv4Address> sources = {cfg.slot(VmRole::attacker).reserved_ip, cfg.slot(VmRole::victim).reserved_ip};
    for (const auto& r : cfg.redirectors)
      sources.push_back(r.ip);
    for (auto src : sources) {
      for (auto a = cfg.network.address().value(); a <= cfg.network.broadcast().value(); ++a) {
        const Ipv4Address target(a);
        const bool endpoint = target == cfg.network.gateway() || cfg.find_redirector(target) != nullptr ||
                              target == cfg.slot(VmRole::victim).reserved_ip ||
                              target == cfg.slot(VmRole::attacker).reserved_ip;
        TL_PROPERTY((sim.probe_host(src, target)) == (endpoint ? HostState::up : HostState::down), src << "->" << target);
      }
      TL_PROPERTY((sim.resolve_connection(src, scanner, 22)) == (std::nullopt), "");
    }
    TL_PROPERTY((sim.probe_host(cfg.network.gateway(), scanner)) == (HostState::up), "");
  }
}

inline void mirror_sees_every_frame() {
  Rng rng(5);
  for (int i = 0; i < 60; ++i) {
    auto cfg = testing::random_lab(rng, 8, 24, 28);
    for (const auto& r : cfg.redirectors)
      for (const auto& p : r.redirections)
        if (uniform(rng, 0, 1) == 1)
          cfg.victim_services.insert(p.victim_port);
    auto sim = testing::build(cfg);
    const auto attacker = cfg.slot(VmRole::attacker).reserved_ip;
    std::vector<Ipv4Address> targets = {cfg.slot(VmRole::victim).reserved_ip,
                                        cfg.slot(VmRole::scanner).reserved_ip, cfg.network.gateway()};
    for (const auto& r : cfg.redirectors)
      targets.push_back(r.ip);
    std::size_t expected = 0;
    for (auto target : targets) {
      std::set<std::uint16_t> ports;
      if (const auto* r = cfg.find_redirector(target))
        for (const auto& p : r->redirections)
          ports.insert(p.exposed_port);
      for (auto p : cfg.victim_services)
        ports.insert(p);
      ports.insert(static_cast<std::uint16_t>(uniform(rng, 1, 65535)));
      for (auto port : ports) {
        const auto res = sim.scan_ports(attacker, target, port, port);
        expected += 1; // address probe
        if (res.host == HostState::down)
          continue;
        const auto* host = cfg.find_redirector(target);
        const auto state = res.ports.at(port);
        if (host == nullptr)
          expected += state == PortState::open ? 2 : 1;
        else if (state == PortState::open)
          expected += 4;
        else
          expected += state == PortState::filtered ? 2 : 1;
      }
    }
    TL_PROPERTY((sim.capture().size()) == (expected), "");
    TL_PROPERTY((sim.capture().size()) == (sim.capture_log().size()), "");
  }
}

inline void nat_soundness() {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    auto cfg = testing::random_lab(rng, 10, 24, 28);
    for (const auto& r : cfg.redirectors)
      for (const auto& p : r.redirections)
        cfg.victim_services.insert(p.victim_port);
    auto sim = testing::build(cfg);
    const auto attacker = cfg.slot(VmRole::attacker).reserved_ip;
    const auto victim = cfg.slot(VmRole::victim).reserved_ip;
    for (const auto& r : cfg.redirectors) {
      for (const auto& p : r.redirections)
        TL_PROPERTY((sim.resolve_connection(attacker, r.ip, p.exposed_port)) == ((Endpoint{victim, p.victim_port})), "");
      const auto port = static_cast<std::uint16_t>(uniform(rng, 1, 65535));
      const bool mapped = std::any_of(r.redirections.begin(), r.redirections.end(),
                                      [&](const PortRedirection& p) { return p.exposed_port == port; });
      if (!mapped)
        TL_PROPERTY((sim.resolve_connection(attacker, r.ip, port)) == (std::nullopt), "");
    }
  }
}

inline void isolation_has_exactly_one_allowed_cell() {
  int allowed = 0;
  for (const auto& policy : {IsolationPolicy::isolated(), IsolationPolicy::outbound_only("wlp2s0")}) {
    auto cfg = testing::small_lab();
    cfg.isolation = policy;
    const auto sim = testing::build(cfg);
    for (auto dir : {Direction::inbound, Direction::outbound})
      allowed += sim.check_external(dir) == ExternalVerdict::allowed;
  }
  TL_PROPERTY((allowed) == (1), "");
}

inline void reconfigure_preserves_redirections() {
  const auto before = testing::deception_lab(testing::deception_services());
  for (const char* file : {"deception_24.lab", "deception_moved.lab"}) {
    const auto after = parse_lab_config(testing::data_file(file));
    const auto plan = plan_reconfigure(before, after);
    auto sim = testing::build(before);
    TL_PROPERTY(ordering_violations(plan, sim.plan_context()).empty(), "");
    sim = apply_plan(std::move(sim), plan);
    const auto target = reconfigured_config(before, after);
    TL_PROPERTY((triples(target)) == (triples(before)), file);
    TL_PROPERTY((sim.nat_table()) == (expected_nat(target)), "");
    TL_PROPERTY(sim.invariant_violations().empty(), "");
  }
}

inline LabConfig mutate(Rng& rng, const LabConfig& base) {
  auto cfg = base;
  switch (uniform(rng, 0, 5)) {
    case 0: { // widen
      const int prefix = std::max(16, cfg.network.cidr() - uniform(rng, 1, 4));
      const auto mask = Netmask::from_prefix(prefix);
      cfg.network = derive_network(Ipv4Address(cfg.network.address().value() & mask.value()), mask);
      break;
    }
    case 1: // move
      cfg.network = testing::random_network(rng, 20, 29);
      break;
    case 2:
      cfg.slot(static_cast<VmRole>(uniform(rng, 0, 2))).tap_name = "tn" + std::to_string(uniform(rng, 0, 99));
      break;
    case 3:
      cfg.isolation = cfg.isolation.allows_outbound() ? IsolationPolicy::isolated()
                                                      : IsolationPolicy::outbound_only("wan0");
      break;
    case 4:
      cfg.bridge_mac = testing::random_mac(rng, 0x0e);
      break;
    default:
      break;
  }
  refresh_reservations(cfg);
  cfg.redirectors.clear();
  return cfg;
}

inline void random_reconfigurations() {
  Rng rng(7);
  int applied = 0;
  for (int i = 0; i < 500; ++i) {
    const auto before = testing::random_lab(rng, 8);
    TL_PROPERTY(plan_reconfigure(before, before).empty(), "");
    const auto after = mutate(rng, before);
    if (!validate_config(after, {}).empty())
      continue;
    LabConfig target = before;
    try {
      target = reconfigured_config(before, after);
    } catch (const Error& e) {
      TL_PROPERTY((e.code()) == (Errc::capacity), "");
      TL_PROPERTY((before.redirectors.size()) > (pool_size(after.network)), "");
      continue;
    }
    const auto plan = plan_reconfigure(before, after);
    auto sim = testing::build(before);
    const auto problems = ordering_violations(plan, sim.plan_context());
    TL_PROPERTY(problems.empty(), problems.front());
    sim = apply_plan(std::move(sim), plan);
    TL_PROPERTY((triples(target)) == (triples(before)), "");
    TL_PROPERTY((sim) == (testing::build(target)), to_text(plan));
    for (const auto& op : plan)
      TL_PROPERTY(!(std::holds_alternative<ops::RestoreVmSnapshot>(op)), "");
    ++applied;
  }
  TL_PROPERTY((applied) > (250), "");
}

inline void reset_leaves_nat_alone() {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto cfg = testing::random_lab(rng);
    const auto plan = plan_reset(cfg);
    TL_PROPERTY((plan.size()) == (3u), "");
    for (const auto& op : plan)
      TL_PROPERTY(std::holds_alternative<ops::RestoreVmSnapshot>(op), "");
    const auto before = testing::build(cfg);
    const auto after = apply_plan(before, plan);
    TL_PROPERTY((after.nat_table()) == (before.nat_table()), "");
    TL_PROPERTY((after.namespaces()) == (before.namespaces()), "");
  }
}

inline lab::Command random_command(Rng& rng, const lab::LabState& state) {
  const auto& cfg = state.config;
  auto host_ip = [&]() {
    if (cfg.redirectors.empty())
      return cfg.network.gateway().to_string();
    return cfg.redirectors[static_cast<std::size_t>(uniform(rng, 0, static_cast<int>(cfg.redirectors.size()) - 1))]
        .ip.to_string();
  };
  switch (uniform(rng, 0, 9)) {
    case 0:
    case 1:
    case 2:
      return {"add-host", {}};
    case 3:
      return {"add-host", {{"ip", pool_address(cfg.network, static_cast<std::uint32_t>(uniform(rng, 0, 9))).to_string()}}};
    case 4:
    case 5:
      return {"redirect", {{"from-ip", host_ip()}, {"from-port", std::to_string(uniform(rng, 1, 300))},
                           {"to-port", std::to_string(uniform(rng, 20, 25))}}};
    case 6:
      return {"scan", {{"from", "attacker"}, {"target", host_ip()}, {"ports", "1-300"}}};
    case 7:
      return uniform(rng, 0, 1) ? lab::Command{"isolate", {{"mode", "isolated"}}}
                                : lab::Command{"isolate", {{"mode", "outbound"}, {"uplink", "wan0"}}};
    case 8:
      return {"reset", {}};
    default:
      return {"reconfigure", {{"config", testing::data_file(uniform(rng, 0, 1) ? "deception_24.lab" : "deception.lab")}}};
  }
}

inline void cli_replay_equivalence() {
  Rng rng(9);
  for (int i = 0; i < 25; ++i) {
    auto res = lab::execute(std::nullopt, {"create", {{"config", testing::data_file("small.lab") +
                                                                     "victimServices = 20 21 22 23 24 25\n"}}});
    TL_PROPERTY((res.status) == (0), "");
    auto state = std::move(*res.state);
    for (int step = 0; step < 30; ++step) {
      auto next = lab::execute(state, random_command(rng, state));
      state = std::move(*next.state);
      TL_PROPERTY((state.sim) == (lab::recompute_sim(state)), "");
    }
    const auto loaded = lab::deserialize_state(lab::serialize_state(state));
    TL_PROPERTY((loaded.sim) == (state.sim), "");
    const auto replayed = lab::replay(loaded.journal);
    TL_PROPERTY((replayed.sim) == (loaded.sim), "");
    TL_PROPERTY((replayed.config) == (loaded.config), "");
    TL_PROPERTY((replayed.revision) == (loaded.revision), "");
  }
}

inline void pcap_record_count() {
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const auto cfg = testing::random_lab(rng, 6, 24, 28);
    auto sim = testing::build(cfg);
    for (const auto& r : cfg.redirectors)
      sim.scan_ports(cfg.slot(VmRole::attacker).reserved_ip, r.ip, 1, static_cast<std::uint16_t>(uniform(rng, 1, 50)));
    const auto bytes = pcap::write_capture(sim.capture());
    TL_PROPERTY((bytes.size()) >= (24u), "");
    TL_PROPERTY((bytes[0]) == (0xa1), "");
    TL_PROPERTY((bytes[1]) == (0xb2), "");
    TL_PROPERTY((bytes[2]) == (0xc3), "");
    TL_PROPERTY((bytes[3]) == (0xd4), "");
    std::size_t at = 24, records = 0;
    while (at < bytes.size()) {
      const std::size_t len = std::size_t{bytes[at + 8]} << 24 | std::size_t{bytes[at + 9]} << 16 |
                              std::size_t{bytes[at + 10]} << 8 | bytes[at + 11];
      at += 16 + len;
      ++records;
    }
    TL_PROPERTY((at) == (bytes.size()), "");
    TL_PROPERTY((records) == (sim.capture().size()), "");
  }
}

} // namespace threatlab::properties
