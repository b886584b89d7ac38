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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "threatlab/config_file.hpp"
#include "threatlab/error.hpp"
#include "threatlab/model.hpp"
#include "threatlab/pcap.hpp"
#include "threatlab/plan.hpp"
#include "threatlab/planner.hpp"
#include "threatlab/services.hpp"
#include "threatlab/shell.hpp"
#include "threatlab/sim.hpp"

namespace threatlab::lab {

inline constexpr int exit_ok = 0;
inline constexpr int exit_domain = 1;
inline constexpr int exit_usage = 2;

inline constexpr int state_format_version = 1;

/// A command with its arguments resolved to plain values. Journaled commands
/// are stored fully resolved (config text inlined, allocated addresses
/// explicit) so replaying them is deterministic.
struct Command {
  std::string name;
  std::map<std::string, std::string> args;

  bool operator==(const Command&) const = default;
};

struct LabState {
  LabConfig config;
  SimSystem sim;
  std::string created_at;
  std::uint64_t revision = 0;
  std::vector<Plan> history;    // every plan applied to `sim`, in order
  std::vector<Command> journal; // every command that changed the state
};

/// Host facts a command may consult.
struct Environment {
  SystemInventory inventory;
  std::string now; // timestamp recorded by create
};

struct Result {
  std::optional<LabState> state;
  std::string output;
  int status = exit_ok;
  bool changed = false;            // state must be persisted
  std::vector<std::uint8_t> blob;  // binary payload (capture)
};

// -- Throughput ---------------------------------------------------------------

/// Complete analysis cycles that fit into `window_seconds` when each sample
/// runs for `per_sample_seconds` and the lab takes `restore_seconds` to reset.
inline std::uint64_t samples_per_hour(double window_seconds, double per_sample_seconds, double restore_seconds) {
  if (!(window_seconds >= 0) || !(per_sample_seconds >= 0) || !(restore_seconds >= 0))
    throw Error(Errc::domain, "durations must be non-negative");
  const double cycle = per_sample_seconds + restore_seconds;
  if (!(cycle > 0))
    throw Error(Errc::domain, "sample plus restore time must be positive");
  return static_cast<std::uint64_t>(std::floor(window_seconds / cycle));
}

// -- Reports --------------------------------------------------------------------

/// One "key value" line per field, in a fixed order.
inline std::string status_text(const LabState& state) {
  const auto& c = state.config;
  const auto& net = c.network;
  std::ostringstream out;
  out << "bridgeName " << c.bridge_name << '\n';
  for (std::size_t i = 0; i < c.vm_slots.size(); ++i)
    out << "tunTapName#" << i + 1 << ' ' << c.vm_slots[i].tap_name << '\n';
  out << "hostInterfaceName " << (c.isolation.allows_outbound() ? c.isolation.uplink() : "none") << '\n';
  out << "nwAddress " << net.address() << '\n';
  out << "netmask " << net.netmask() << '\n';
  out << "cidr " << net.cidr() << '\n';
  out << "broadcast " << net.broadcast() << '\n';
  out << "gateway " << net.gateway() << '\n';
  out << "maxHosts " << net.max_hosts() << '\n';
  for (auto role : all_roles)
    out << to_string(role) << "IP " << c.slot(role).reserved_ip << '\n';
  out << "isolation " << (c.isolation.allows_outbound() ? "outbound" : "isolated") << '\n';
  out << "hosts " << c.redirectors.size() << '\n';
  out << "availableIPs " << pool_size(net) - c.redirectors.size() << '\n';
  out << "natRules " << state.sim.nat_table().size() << '\n';
  out << "frames " << state.sim.capture_log().size() << '\n';
  out << "revision " << state.revision << '\n';
  return out.str();
}

/// Port scan listing in the familiar nmap layout.
inline std::string scan_report(Ipv4Address target, const ScanResult& result, std::uint16_t first,
                               std::uint16_t last) {
  std::ostringstream out;
  out << "Scan report for " << target << '\n';
  if (result.host == HostState::down) {
    out << "Host seems down.\n";
    return out.str();
  }
  out << "Host is up.\n";
  std::vector<std::pair<std::uint16_t, PortState>> shown;
  std::size_t closed = 0;
  for (const auto& [port, state] : result.ports) {
    if (state == PortState::closed)
      ++closed;
    else
      shown.emplace_back(port, state);
  }
  const std::size_t scanned = static_cast<std::size_t>(last) - first + 1;
  if (shown.empty()) {
    out << "All " << scanned << " scanned ports on " << target << " are closed\n";
    return out.str();
  }
  if (closed != 0)
    out << "Not shown: " << closed << " closed ports\n";
  std::size_t port_width = 4;
  std::size_t state_width = 5;
  for (const auto& [port, state] : shown) {
    port_width = std::max(port_width, std::to_string(port).size() + 4);
    state_width = std::max(state_width, std::string(to_string(state)).size());
  }
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  out << pad("PORT", port_width + 1) << pad("STATE", state_width + 1) << "SERVICE\n";
  for (const auto& [port, state] : shown)
    out << pad(std::to_string(port) + "/tcp", port_width + 1) << pad(to_string(state), state_width + 1)
        << service_name(port) << '\n';
  return out.str();
}

// -- Persistence ------------------------------------------------------------------

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json command_json(const Command& cmd) {
  ordered_json args = ordered_json::object();
  for (const auto& [k, v] : cmd.args)
    args[k] = v;
  return ordered_json{{"command", cmd.name}, {"args", args}};
}

inline Error load_error(const std::string& field, const std::string& why) {
  return Error(Errc::load, "state field '" + field + "': " + why);
}

template <class T>
T field_as(const ordered_json& doc, const std::string& key) {
  if (!doc.contains(key))
    throw load_error(key, "missing");
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw load_error(key, e.what());
  }
}

} // namespace detail

inline std::string serialize_state(const LabState& state) {
  using detail::ordered_json;
  ordered_json doc;
  doc["format_version"] = state_format_version;
  doc["revision"] = state.revision;
  doc["created_at"] = state.created_at;
  doc["config"] = render_lab_config(state.config);
  ordered_json history = ordered_json::array();
  for (const auto& plan : state.history) {
    ordered_json lines = ordered_json::array();
    for (const auto& op : plan)
      lines.push_back(to_text(op));
    history.push_back(std::move(lines));
  }
  doc["history"] = std::move(history);
  ordered_json journal = ordered_json::array();
  for (const auto& cmd : state.journal)
    journal.push_back(detail::command_json(cmd));
  doc["journal"] = std::move(journal);
  ordered_json capture = ordered_json::array();
  for (const auto& frame : state.sim.capture_log())
    capture.push_back(to_text(frame));
  doc["capture"] = std::move(capture);
  return doc.dump(1) + "\n";
}

/// Inverse of `serialize_state`. The simulated system is rebuilt by applying
/// the recorded plan history to a fresh system.
inline LabState deserialize_state(const std::string& text) {
  using detail::field_as;
  using detail::load_error;
  using detail::ordered_json;
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::load, std::string("state file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object())
    throw Error(Errc::load, "state file is not a JSON object");
  const auto version = field_as<int>(doc, "format_version");
  if (version != state_format_version)
    throw load_error("format_version", "expected " + std::to_string(state_format_version) + ", found " +
                                           std::to_string(version));

  const auto revision = field_as<std::uint64_t>(doc, "revision");
  const auto created_at = field_as<std::string>(doc, "created_at");
  LabConfig config = [&] {
    try {
      return parse_lab_config(field_as<std::string>(doc, "config"));
    } catch (const Error& e) {
      if (e.code() == Errc::load)
        throw;
      throw load_error("config", e.what());
    }
  }();

  const auto history_doc = field_as<std::vector<std::vector<std::string>>>(doc, "history");
  std::vector<Plan> history;
  for (std::size_t i = 0; i < history_doc.size(); ++i) {
    Plan plan;
    for (std::size_t j = 0; j < history_doc[i].size(); ++j) {
      try {
        plan.push_back(parse_op(history_doc[i][j]));
      } catch (const Error& e) {
        throw load_error("history[" + std::to_string(i) + "][" + std::to_string(j) + "]", e.what());
      }
    }
    history.push_back(std::move(plan));
  }

  if (!doc.contains("journal") || !doc.at("journal").is_array())
    throw load_error("journal", "missing or not an array");
  std::vector<Command> journal;
  for (std::size_t i = 0; i < doc.at("journal").size(); ++i) {
    const auto& entry = doc.at("journal")[i];
    const auto where = "journal[" + std::to_string(i) + "]";
    try {
      Command cmd;
      cmd.name = entry.at("command").get<std::string>();
      for (const auto& [k, v] : entry.at("args").items())
        cmd.args[k] = v.get<std::string>();
      journal.push_back(std::move(cmd));
    } catch (const nlohmann::json::exception& e) {
      throw load_error(where, e.what());
    }
  }

  std::vector<Frame> frames;
  const auto capture_doc = field_as<std::vector<std::string>>(doc, "capture");
  for (std::size_t i = 0; i < capture_doc.size(); ++i) {
    try {
      frames.push_back(parse_frame(capture_doc[i]));
    } catch (const Error& e) {
      throw load_error("capture[" + std::to_string(i) + "]", e.what());
    }
  }

  SimSystem sim(config.victim_services);
  for (std::size_t i = 0; i < history.size(); ++i) {
    try {
      sim = apply_plan(std::move(sim), history[i]);
    } catch (const Error& e) {
      throw load_error("history[" + std::to_string(i) + "]", e.what());
    }
  }
  sim.set_capture_log(std::move(frames));
  return LabState{std::move(config), std::move(sim), created_at, revision, std::move(history), std::move(journal)};
}

inline void save_state(const LabState& state, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(Errc::io, "cannot write " + tmp);
    out << serialize_state(state);
    if (!out.flush())
      throw Error(Errc::io, "cannot write " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(Errc::io, "cannot replace " + path.string() + ": " + ec.message());
}

inline LabState load_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(Errc::load, "cannot read state file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_state(buf.str());
}

// -- Commands ---------------------------------------------------------------------

namespace detail {

inline const std::string& arg(const Command& cmd, const std::string& key) {
  auto it = cmd.args.find(key);
  if (it == cmd.args.end() || it->second.empty())
    throw Error(Errc::usage, cmd.name + ": missing --" + key);
  return it->second;
}

inline std::optional<std::string> opt_arg(const Command& cmd, const std::string& key) {
  auto it = cmd.args.find(key);
  if (it == cmd.args.end() || it->second.empty())
    return std::nullopt;
  return it->second;
}

inline long long int_arg(const Command& cmd, const std::string& key) {
  const auto& text = arg(cmd, key);
  try {
    return threatlab::detail::parse_integer(text, "--" + key);
  } catch (const Error& e) {
    throw Error(Errc::usage, e.what());
  }
}

inline Ipv4Address ip_arg(const Command& cmd, const std::string& key) {
  try {
    return Ipv4Address::parse(arg(cmd, key));
  } catch (const Error& e) {
    if (e.code() == Errc::usage)
      throw;
    throw Error(Errc::usage, "--" + key + ": " + e.what());
  }
}

inline std::pair<std::uint16_t, std::uint16_t> port_range(const std::string& text) {
  const auto dash = text.find('-');
  try {
    const auto first = checked_port(threatlab::detail::parse_integer(text.substr(0, dash), "--ports"));
    const auto last = dash == std::string::npos
                          ? first
                          : checked_port(threatlab::detail::parse_integer(text.substr(dash + 1), "--ports"));
    if (last < first)
      throw Error(Errc::usage, "--ports: empty range " + text);
    return {first, last};
  } catch (const Error& e) {
    if (e.code() == Errc::usage)
      throw;
    throw Error(Errc::usage, std::string("--ports: ") + e.what());
  }
}

inline std::string violation_list(const std::vector<Violation>& violations) {
  std::string out = "configuration rejected:\n";
  for (const auto& v : violations)
    out += "  " + v.to_string() + "\n";
  return out;
}

inline void commit(LabState& state, Plan plan, Command journaled, bool bump = true) {
  state.sim = apply_plan(std::move(state.sim), plan);
  state.history.push_back(std::move(plan));
  state.journal.push_back(std::move(journaled));
  if (bump)
    ++state.revision;
}

inline std::uint32_t default_ordinal(const LabConfig& config, Ipv4Address ip) {
  const auto offset = ip.value() - config.network.address().value();
  if (offset <= max_ordinal && config.find_ordinal(offset) == nullptr)
    return offset;
  for (std::uint32_t ordinal = 1; ordinal <= max_ordinal; ++ordinal)
    if (config.find_ordinal(ordinal) == nullptr)
      return ordinal;
  throw Error(Errc::capacity, "no free host ordinal left");
}

inline Ipv4Address endpoint_arg(const LabConfig& config, const std::string& text) {
  for (auto role : all_roles)
    if (text == to_string(role))
      return config.slot(role).reserved_ip;
  try {
    return Ipv4Address::parse(text);
  } catch (const Error& e) {
    throw Error(Errc::usage, "--from: expected a VM role or an address: " + std::string(e.what()));
  }
}

inline Result run(std::optional<LabState> state, const Command& cmd, const Environment& env) {
  Result res;
  const auto& name = cmd.name;

  if (name == "throughput") {
    const auto n = samples_per_hour(std::stod(arg(cmd, "window")), std::stod(arg(cmd, "sample")),
                                    std::stod(arg(cmd, "restore")));
    res.output = std::to_string(n) + "\n";
    res.state = std::move(state);
    return res;
  }

  if (name == "create") {
    if (state)
      throw Error(Errc::usage, "a lab already exists; use reconfigure");
    const auto& text = arg(cmd, "config");
    auto config = parse_lab_config(text);
    if (auto violations = validate_config(config, env.inventory); !violations.empty()) {
      res.output = violation_list(violations);
      res.status = exit_domain;
      return res;
    }
    auto plan = compile_network(config);
    LabState fresh{config, SimSystem(config.victim_services), env.now, 0, {}, {}};
    const auto ops = plan.size();
    commit(fresh, std::move(plan), Command{"create", {{"config", text}}});
    res.output = "created lab on " + config.network.to_string() + " (" + std::to_string(ops) + " ops)\n" +
                 status_text(fresh);
    res.state = std::move(fresh);
    res.changed = true;
    return res;
  }

  if (!state)
    throw Error(Errc::usage, "no lab state; run create first");
  LabState& lab = *state;

  if (name == "status") {
    res.output = status_text(lab);
  } else if (name == "add-host") {
    const auto ip = opt_arg(cmd, "ip") ? ip_arg(cmd, "ip") : allocate_next_ip(lab.config);
    const auto ordinal = opt_arg(cmd, "ordinal") ? static_cast<std::uint32_t>(int_arg(cmd, "ordinal"))
                                                 : default_ordinal(lab.config, ip);
    auto plan = plan_add_host(lab.config, ip, ordinal);
    commit(lab, std::move(plan),
           Command{"add-host", {{"ip", ip.to_string()}, {"ordinal", std::to_string(ordinal)}}});
    auto& hosts = lab.config.redirectors;
    hosts.insert(std::upper_bound(hosts.begin(), hosts.end(), ordinal,
                                  [](std::uint32_t o, const RedirectorSpec& r) { return o < r.ordinal; }),
                 RedirectorSpec{ordinal, ip, {}});
    const auto gen = redirector_names(ordinal);
    res.output = "added host " + std::to_string(ordinal) + " " + ip.to_string() + " (" + gen.ns + ")\n";
    res.changed = true;
  } else if (name == "redirect") {
    const auto from_ip = ip_arg(cmd, "from-ip");
    const auto to_ip = opt_arg(cmd, "to-ip") ? ip_arg(cmd, "to-ip") : lab.config.slot(VmRole::victim).reserved_ip;
    const auto from_port = int_arg(cmd, "from-port");
    const auto to_port = int_arg(cmd, "to-port");
    auto plan = plan_redirect(lab.config, from_ip, from_port, to_ip, to_port);
    commit(lab, std::move(plan),
           Command{"redirect", {{"from-ip", from_ip.to_string()}, {"from-port", std::to_string(from_port)},
                                {"to-ip", to_ip.to_string()}, {"to-port", std::to_string(to_port)}}});
    for (auto& host : lab.config.redirectors)
      if (host.ip == from_ip)
        host.redirections.push_back(make_redirection(from_port, to_port));
    res.output = "redirect " + from_ip.to_string() + ":" + std::to_string(from_port) + " -> " + to_ip.to_string() +
                 ":" + std::to_string(to_port) + "\n";
    res.changed = true;
  } else if (name == "isolate") {
    const auto& mode = arg(cmd, "mode");
    IsolationPolicy policy = IsolationPolicy::isolated();
    Command journaled{"isolate", {{"mode", mode}}};
    if (mode == "outbound") {
      const auto uplink = opt_arg(cmd, "uplink");
      if (!uplink)
        throw Error(Errc::usage, "isolate --mode outbound needs --uplink");
      try {
        policy = IsolationPolicy::outbound_only(*uplink);
      } catch (const Error& e) {
        throw Error(Errc::usage, e.what());
      }
      journaled.args["uplink"] = *uplink;
    } else if (mode != "isolated") {
      throw Error(Errc::usage, "--mode must be isolated or outbound");
    }
    auto next = lab.config;
    next.isolation = policy;
    if (auto violations = validate_config(next, SystemInventory{}); !violations.empty()) {
      res.output = violation_list(violations);
      res.status = exit_domain;
      res.state = std::move(state);
      return res;
    }
    commit(lab, plan_set_isolation(policy), std::move(journaled));
    lab.config.isolation = policy;
    res.output = "isolation " + policy.to_string() + "\n";
    res.changed = true;
  } else if (name == "scan") {
    const auto src = endpoint_arg(lab.config, arg(cmd, "from"));
    const auto target = ip_arg(cmd, "target");
    const auto [first, last] = port_range(opt_arg(cmd, "ports").value_or("1-1000"));
    const auto result = lab.sim.scan_ports(src, target, first, last);
    lab.journal.push_back(Command{"scan", {{"from", src.to_string()}, {"target", target.to_string()},
                                           {"ports", std::to_string(first) + "-" + std::to_string(last)}}});
    res.output = scan_report(target, result, first, last);
    res.changed = true;
  } else if (name == "reset") {
    auto plan = plan_reset(lab.config);
    std::string out;
    for (auto role : all_roles)
      out += "restore " + std::string(to_string(role)) + " " + lab.config.slot(role).vm_name + "@" +
             lab.config.snapshot_name + "\n";
    commit(lab, std::move(plan), Command{"reset", {}});
    res.output = out;
    res.changed = true;
  } else if (name == "reconfigure") {
    const auto& text = arg(cmd, "config");
    const auto requested = parse_lab_config(text);
    const auto target = reconfigured_config(lab.config, requested);
    if (auto violations = validate_config(target, env.inventory); !violations.empty()) {
      res.output = violation_list(violations);
      res.status = exit_domain;
      res.state = std::move(state);
      return res;
    }
    auto plan = plan_reconfigure(lab.config, requested);
    const auto ops = plan.size();
    commit(lab, std::move(plan), Command{"reconfigure", {{"config", text}}});
    lab.config = target;
    lab.sim.set_victim_services(target.victim_services);
    res.output = "reconfigured lab on " + target.network.to_string() + " (" + std::to_string(ops) + " ops)\n" +
                 status_text(lab);
    res.changed = true;
  } else if (name == "render") {
    Plan plan;
    if (opt_arg(cmd, "history") == "1") {
      for (const auto& p : lab.history)
        plan.insert(plan.end(), p.begin(), p.end());
    } else {
      plan = compile_network(lab.config);
    }
    res.output = shell::render_commands(plan).text();
  } else if (name == "capture") {
    const auto& frames = lab.sim.capture();
    if (opt_arg(cmd, "format") == "text") {
      for (const auto& f : frames)
        res.output += to_text(f) + "\n";
    } else {
      res.blob = pcap::write_capture(frames);
      res.output = std::to_string(frames.size()) + " frames\n";
    }
  } else {
    throw Error(Errc::usage, "unknown command '" + name + "'");
  }
  res.state = std::move(state);
  return res;
}

} // namespace detail

/// Runs one command against `state` (nullopt when no lab exists yet). Errors
/// become a nonzero status with the message as output: 2 for usage errors,
/// 1 for everything else. On failure the returned state is the input state.
inline Result execute(std::optional<LabState> state, const Command& cmd, const Environment& env = {}) {
  std::optional<LabState> saved = state;
  try {
    return detail::run(std::move(state), cmd, env);
  } catch (const Error& e) {
    Result res;
    res.state = std::move(saved);
    res.output = std::string("error: ") + e.what() + "\n";
    res.status = e.code() == Errc::usage ? exit_usage : exit_domain;
    return res;
  } catch (const std::invalid_argument& e) {
    Result res;
    res.state = std::move(saved);
    res.output = std::string("error: malformed number: ") + e.what() + "\n";
    res.status = exit_usage;
    return res;
  } catch (const std::out_of_range& e) {
    Result res;
    res.state = std::move(saved);
    res.output = std::string("error: number out of range: ") + e.what() + "\n";
    res.status = exit_usage;
    return res;
  }
}

/// Re-executes a journal from scratch.
inline LabState replay(const std::vector<Command>& journal) {
  std::optional<LabState> state;
  for (std::size_t i = 0; i < journal.size(); ++i) {
    auto res = execute(std::move(state), journal[i]);
    if (res.status != exit_ok)
      throw Error(Errc::load, "journal[" + std::to_string(i) + "] failed: " + res.output);
    state = std::move(res.state);
  }
  if (!state)
    throw Error(Errc::load, "empty journal");
  return std::move(*state);
}

/// The simulated system obtained by applying the whole plan history to a fresh
/// system, with the recorded traffic.
inline SimSystem recompute_sim(const LabState& state) {
  SimSystem sim(state.config.victim_services);
  for (const auto& plan : state.history)
    sim = apply_plan(std::move(sim), plan);
  sim.set_capture_log(state.sim.capture_log());
  return sim;
}

} // namespace threatlab::lab
