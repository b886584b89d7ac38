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

// threatlab: build and drive a simulated malware analysis lab.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "threatlab/lab.hpp"

namespace fs = std::filesystem;
using namespace threatlab;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(Errc::usage, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw Error(Errc::io, "cannot write " + path.string());
}

std::string trimmed(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.pop_back();
  return s;
}

// /proc/net/route stores addresses as little-endian hex.
Ipv4Address route_address(const std::string& hex) {
  const auto v = static_cast<std::uint32_t>(std::stoul(hex, nullptr, 16));
  return Ipv4Address((v & 0xff) << 24 | (v >> 8 & 0xff) << 16 | (v >> 16 & 0xff) << 8 | v >> 24);
}

SystemInventory host_inventory() {
  SystemInventory inv;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator("/sys/class/net", ec)) {
    const auto name = entry.path().filename().string();
    try {
      inv.interfaces.emplace_back(name, MacAddress::parse(trimmed(read_file(entry.path() / "address"))));
    } catch (const Error&) {
      // no Ethernet address (tunnels, loopback variants)
    }
  }
  std::ifstream routes("/proc/net/route");
  std::string line;
  std::getline(routes, line);
  while (std::getline(routes, line)) {
    std::istringstream fields(line);
    std::string iface, dest, gateway, flags, refcnt, use, metric, mask;
    if (!(fields >> iface >> dest >> gateway >> flags >> refcnt >> use >> metric >> mask))
      continue;
    try {
      const auto m = route_address(mask);
      if (m.value() == 0)
        continue;
      inv.occupied_networks.push_back(derive_network(route_address(dest), Netmask(m.value())));
    } catch (const std::exception&) {
      // host routes and odd masks do not occupy a lab-sized network
    }
  }
  return inv;
}

// Lines of "iface <name> <mac>" or "network <a.b.c.d/n>"; '#' starts a comment.
SystemInventory file_inventory(const fs::path& path) {
  SystemInventory inv;
  std::istringstream in(read_file(path));
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream words(line);
    std::string kind, a, b;
    if (!(words >> kind))
      continue;
    const auto where = path.string() + ":" + std::to_string(n);
    if (kind == "iface" && words >> a >> b)
      inv.interfaces.emplace_back(a, MacAddress::parse(b));
    else if (kind == "network" && words >> a)
      inv.occupied_networks.push_back(parse_network(a));
    else
      throw Error(Errc::usage, where + ": expected 'iface <name> <mac>' or 'network <cidr>'");
  }
  return inv;
}

class StateLock {
 public:
  explicit StateLock(const fs::path& state) {
    const auto path = state.string() + ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0)
      throw Error(Errc::io, "cannot lock " + path);
  }
  ~StateLock() {
    if (fd_ >= 0)
      ::close(fd_);
  }
  StateLock(const StateLock&) = delete;
  StateLock& operator=(const StateLock&) = delete;

 private:
  int fd_ = -1;
};

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build and drive a simulated malware analysis lab"};
  app.require_subcommand(1);
  std::string state_path = "threatlab.state.json";
  std::string inventory = "host";
  app.add_option("--state", state_path, "Lab state file")->capture_default_str();
  app.add_option("--inventory", inventory, "host, none, or an inventory file")->capture_default_str();

  lab::Command cmd;
  std::string config_path, out_path;
  auto bind = [&](CLI::App* sub, const std::string& key, const std::string& help, bool required = false) {
    auto* opt = sub->add_option_function<std::string>("--" + key, [&cmd, key](const std::string& v) {
      cmd.args[key] = v;
    }, help);
    if (required)
      opt->required();
    return opt;
  };

  auto* create = app.add_subcommand("create", "Create a lab from a config file");
  create->add_option("--config", config_path, "Lab description")->required()->check(CLI::ExistingFile);
  auto* reconfigure = app.add_subcommand("reconfigure", "Move the lab to a new config, keeping its hosts");
  reconfigure->add_option("--config", config_path, "Lab description")->required()->check(CLI::ExistingFile);

  auto* add_host = app.add_subcommand("add-host", "Add a redirector host");
  bind(add_host, "ip", "Address (default: next free)");
  bind(add_host, "ordinal", "Host ordinal (default: derived from the address)");

  auto* redirect = app.add_subcommand("redirect", "Forward a redirector port to the victim");
  bind(redirect, "from-ip", "Redirector address", true);
  bind(redirect, "from-port", "Exposed port", true);
  bind(redirect, "to-port", "Victim port", true);
  bind(redirect, "to-ip", "Victim address (default: the victim reservation)");

  auto* isolate = app.add_subcommand("isolate", "Set external visibility");
  bind(isolate, "mode", "isolated or outbound", true)->check(CLI::IsMember({"isolated", "outbound"}));
  bind(isolate, "uplink", "Host interface for outbound traffic");

  app.add_subcommand("status", "Print the lab summary");

  auto* scan = app.add_subcommand("scan", "Port-scan a lab address");
  bind(scan, "from", "Source VM role or address", true);
  bind(scan, "target", "Target address", true);
  bind(scan, "ports", "Port range a-b (default 1-1000)");

  app.add_subcommand("reset", "Restore the three VMs to their snapshot");

  auto* render = app.add_subcommand("render", "Print the shell commands for the lab");
  render->add_option("--out", out_path, "Write the script here instead of stdout");
  render->add_flag_function("--history", [&cmd](std::int64_t) { cmd.args["history"] = "1"; },
                            "Render every applied plan instead of a fresh build");

  auto* capture = app.add_subcommand("capture", "Export the mirrored traffic");
  capture->add_option("--out", out_path, "pcap output file");
  bind(capture, "format", "pcap or text")->check(CLI::IsMember({"pcap", "text"}));

  auto* throughput = app.add_subcommand("throughput", "Samples analysable in a time window");
  bind(throughput, "window", "Window in seconds", true);
  bind(throughput, "sample", "Seconds per sample", true);
  bind(throughput, "restore", "Seconds to restore the lab", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? lab::exit_ok : lab::exit_usage;
  }

  try {
    cmd.name = app.get_subcommands().front()->get_name();
    if (!config_path.empty())
      cmd.args["config"] = read_file(config_path);
    if (cmd.name == "capture" && out_path.empty() && cmd.args["format"] != "text")
      throw Error(Errc::usage, "capture needs --out unless --format text");

    if (cmd.name == "throughput") {
      auto res = lab::execute(std::nullopt, cmd);
      (res.status == lab::exit_ok ? std::cout : std::cerr) << res.output;
      return res.status;
    }

    lab::Environment env;
    if (inventory == "host")
      env.inventory = host_inventory();
    else if (inventory != "none")
      env.inventory = file_inventory(inventory);
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    env.now = stamp;

    StateLock lock(state_path);
    std::optional<lab::LabState> state;
    if (fs::exists(state_path))
      state = lab::load_state(state_path);

    auto res = lab::execute(std::move(state), cmd, env);
    if (res.status != lab::exit_ok) {
      std::cerr << res.output;
      return res.status;
    }
    if (res.changed)
      lab::save_state(*res.state, state_path);
    if (!out_path.empty()) {
      if (cmd.name == "capture") {
        write_file(out_path, std::string(res.blob.begin(), res.blob.end()));
        std::cout << res.output;
      } else {
        write_file(out_path, res.output);
        std::cout << res.output.substr(0, res.output.find('\n') + 1); // header line
      }
    } else {
      std::cout << res.output;
    }
    return lab::exit_ok;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == Errc::usage ? lab::exit_usage : lab::exit_domain;
  }
}
