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

// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if
// any criterion fails. "--regenerate-golden" rewrites the stored script after a
// deliberate template change.

#include <chrono>
#include <cstring>
#include <functional>
#include <iostream>

#include "properties.hpp"

using namespace threatlab;
using testing::ip;
using Clock = std::chrono::steady_clock;

namespace {

const char* golden_path = THREATLAB_GOLDEN "/small_compile.sh";

struct Failed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok)
    throw Failed(what);
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::set<std::uint16_t> open_ports(const ScanResult& r) {
  std::set<std::uint16_t> out;
  for (const auto& [port, state] : r.ports)
    if (state == PortState::open)
      out.insert(port);
  return out;
}

std::string read_file(const char* path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string reference_script() {
  return shell::render_commands(compile_network(parse_lab_config(testing::data_file("small.lab")))).text();
}

void network_inference() {
  const auto start = Clock::now();
  const auto net = derive_network(ip("192.165.15.0"), Netmask::parse("255.255.255.240"));
  const auto elapsed = seconds_since(start);
  require(net.cidr() == 28, "cidr " + std::to_string(net.cidr()));
  require(net.broadcast() == ip("192.165.15.15"), "broadcast " + net.broadcast().to_string());
  require(net.gateway() == ip("192.165.15.1"), "gateway " + net.gateway().to_string());
  require(net.max_hosts() == 14, "max_hosts " + std::to_string(net.max_hosts()));
  require(elapsed < 1e-3, "took " + std::to_string(elapsed) + " s");
}

void deception_scan() {
  const auto start = Clock::now();
  auto sim = testing::build(testing::deception_lab(testing::deception_services()));
  for (const auto& host : testing::deception_map()) {
    const auto target = ip("192.165.15.0") + host.ordinal;
    std::set<std::uint16_t> expected;
    for (const auto& [from, to] : host.ports)
      expected.insert(static_cast<std::uint16_t>(from));
    const auto result = sim.scan_ports(ip("192.165.15.13"), target, 1, 200);
    require(result.host == HostState::up, target.to_string() + " down");
    require(open_ports(result) == expected, target.to_string() + " open set differs");
  }
  const auto elapsed = seconds_since(start);
  require(elapsed < 1.0, "took " + std::to_string(elapsed) + " s");
}

void filtered_semantics() {
  auto sim = testing::build(testing::deception_lab({}));
  const auto target = ip("192.165.15.4");
  const auto result = sim.scan_ports(ip("192.165.15.13"), target, 1, 200);
  for (auto port : {99, 100, 110, 120, 130})
    require(result.ports.at(static_cast<std::uint16_t>(port)) == PortState::filtered,
            std::to_string(port) + " not filtered");
  std::size_t filtered = 0;
  for (const auto& [port, state] : result.ports)
    filtered += state == PortState::filtered;
  require(filtered == 5, std::to_string(filtered) + " filtered ports");
  const auto report = lab::scan_report(target, result, 1, 200);
  require(report.find("\n99/tcp  filtered metagram\n") != std::string::npos, "report line missing:\n" + report);
}

void scaling_layout() {
  const auto start = Clock::now();
  auto cfg = make_lab_config("mybridge", MacAddress::parse("00:50:56:c0:aa:01"), parse_network("192.165.0.0/16"),
                             {TapSpec{"tunVictim", MacAddress::parse("00:60:67:34:12:44"), ""},
                              TapSpec{"tunAttacker", MacAddress::parse("00:60:67:34:12:55"), ""},
                              TapSpec{"tunScanner", MacAddress::parse("00:60:67:34:12:66"), ""}});
  for (std::uint32_t i = 0; i < 998; ++i) {
    const auto addr = allocate_next_ip(cfg);
    RedirectorSpec host{i + 2, addr, {}};
    for (auto [from, to] : {std::pair{99, 139}, {100, 445}, {110, 514}, {120, 514}, {130, 1524}})
      host.redirections.push_back(make_redirection(from, to));
    cfg.redirectors.push_back(host);
  }
  const auto plan = compile_network(cfg);
  auto sim = apply_plan(SimSystem(cfg.victim_services), plan);
  const auto elapsed = seconds_since(start);

  require(cfg.redirectors.front().ip == ip("192.165.0.2"), "first " + cfg.redirectors.front().ip.to_string());
  require(cfg.redirectors.back().ip == ip("192.165.3.231"), "last " + cfg.redirectors.back().ip.to_string());
  const auto r = vm_reservations(cfg.network);
  require(r.victim == ip("192.165.255.252") && r.attacker == ip("192.165.255.253") &&
              r.scanner == ip("192.165.255.254"),
          "reservations");
  require(sim.nat_table().size() == 4990, "NAT size " + std::to_string(sim.nat_table().size()));

  // every address of the /16, probed from the bridge, which sees all endpoints
  std::size_t endpoints = 0;
  const auto gateway = cfg.network.gateway();
  for (auto a = cfg.network.address().value(); a <= cfg.network.broadcast().value(); ++a)
    endpoints += sim.probe_host(gateway, Ipv4Address(a)) == HostState::up;
  require(endpoints == 1002, std::to_string(endpoints) + " endpoints");
  require(elapsed < 10.0, "took " + std::to_string(elapsed) + " s");
}

void throughput() {
  const auto n = lab::samples_per_hour(3600, 300, 5);
  require(n == 11, std::to_string(n) + " samples");
}

void property_suite() {
  const std::vector<std::pair<const char*, void (*)()>> props = {
      {"a scanner invisibility", properties::scanner_invisible},
      {"b mirror completeness", properties::mirror_sees_every_frame},
      {"c isolation truth table", properties::isolation_has_exactly_one_allowed_cell},
      {"d plan ordering (1000 configs)", properties::compiled_plans_are_ordered_and_counted},
      {"e reconfigure preservation", properties::reconfigure_preserves_redirections},
      {"f reset leaves NAT", properties::reset_leaves_nat_alone},
      {"g CLI replay equivalence", properties::cli_replay_equivalence},
      {"h pcap magic and record count", properties::pcap_record_count},
  };
  std::string failures;
  for (const auto& [name, check] : props) {
    const auto start = Clock::now();
    std::string verdict = "ok";
    try {
      check();
    } catch (const std::exception& e) {
      verdict = e.what();
    }
    const auto elapsed = seconds_since(start);
    if (verdict == "ok" && elapsed >= 30.0)
      verdict = "took " + std::to_string(elapsed) + " s";
    std::cout << "    6" << name << ": " << verdict << " (" << elapsed << " s)\n";
    if (verdict != "ok")
      failures += std::string(failures.empty() ? "" : "; ") + "6" + name[0];
  }
  require(failures.empty(), failures);
}

void golden_rendering() {
  const auto expected = read_file(golden_path);
  require(!expected.empty(), std::string("missing ") + golden_path);
  require(reference_script() == expected, "rendered script differs from " + std::string(golden_path));
}

} // namespace

int main(int argc, char** argv) {
  if (argc == 2 && std::strcmp(argv[1], "--regenerate-golden") == 0) {
    std::ofstream(golden_path, std::ios::binary) << reference_script();
    std::cout << "wrote " << golden_path << "\n";
    return 0;
  }
  const std::vector<std::pair<const char*, std::function<void()>>> criteria = {
      {"1 network inference", network_inference},
      {"2 deception scan", deception_scan},
      {"3 filtered semantics", filtered_semantics},
      {"4 scaling layout", scaling_layout},
      {"5 throughput arithmetic", throughput},
      {"6 property suite", property_suite},
      {"7 golden rendering", golden_rendering},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    try {
      check();
      std::cout << "PASS " << name << "\n";
    } catch (const std::exception& e) {
      ++failed;
      std::cout << "FAIL " << name << ": " << e.what() << "\n";
    }
    std::cout.flush();
  }
  return failed == 0 ? 0 : 1;
}
