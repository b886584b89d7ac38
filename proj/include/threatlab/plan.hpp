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

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "threatlab/error.hpp"
#include "threatlab/ipcalc.hpp"
#include "threatlab/model.hpp"

namespace threatlab {

// -- Operations ------------------------------------------------------------------
//
// Every op is a plain value. Interface names live in the default network
// namespace unless an op carries an explicit `ns`.

namespace ops {

struct CreateBridge {
  std::string name;
  MacAddress mac;
  Ipv4Address gateway;
  int prefix = 0;
  bool operator==(const CreateBridge&) const = default;
};

struct DeleteBridge {
  std::string name;
  Ipv4Address gateway;
  int prefix = 0;
  bool operator==(const DeleteBridge&) const = default;
};

struct CreateTap {
  std::string name;
  MacAddress mac;
  bool operator==(const CreateTap&) const = default;
};

struct DeleteTap {
  std::string name;
  bool operator==(const DeleteTap&) const = default;
};

struct AttachToBridge {
  std::string link;
  std::string bridge;
  bool operator==(const AttachToBridge&) const = default;
};

struct SetPromiscuous {
  std::string link;
  bool operator==(const SetPromiscuous&) const = default;
};

struct EnableMirroring {
  std::string bridge;
  std::string target;
  bool operator==(const EnableMirroring&) const = default;
};

struct DisableMirroring {
  std::string bridge;
  bool operator==(const DisableMirroring&) const = default;
};

struct BlockArpExceptBridge {
  std::string link;
  Ipv4Address bridge_ip;
  MacAddress bridge_mac;
  bool operator==(const BlockArpExceptBridge&) const = default;
};

struct UnblockArp {
  std::string link;
  Ipv4Address bridge_ip;
  MacAddress bridge_mac;
  bool operator==(const UnblockArp&) const = default;
};

struct ReserveDhcp {
  MacAddress mac;
  Ipv4Address ip;
  VmRole role = VmRole::victim;
  bool operator==(const ReserveDhcp&) const = default;
};

struct ReleaseDhcp {
  MacAddress mac;
  Ipv4Address ip;
  VmRole role = VmRole::victim;
  bool operator==(const ReleaseDhcp&) const = default;
};

struct CreateNamespace {
  std::string name;
  bool operator==(const CreateNamespace&) const = default;
};

struct RemoveNamespace {
  std::string name;
  bool operator==(const RemoveNamespace&) const = default;
};

struct CreateVethPair {
  std::string outer;
  std::string inner;
  MacAddress inner_mac;
  bool operator==(const CreateVethPair&) const = default;
};

struct MoveToNamespace {
  std::string link;
  std::string ns;
  bool operator==(const MoveToNamespace&) const = default;
};

struct AssignAddress {
  std::string link;
  Ipv4Address ip;
  int prefix = 0;
  std::optional<std::string> ns;
  bool operator==(const AssignAddress&) const = default;
};

struct LinkUp {
  std::string link;
  std::optional<std::string> ns;
  bool operator==(const LinkUp&) const = default;
};

struct AddDnat {
  std::string ns;
  Ipv4Address from_ip;
  std::uint16_t from_port = 0;
  Ipv4Address to_ip;
  std::uint16_t to_port = 0;
  bool operator==(const AddDnat&) const = default;
};

struct RemoveDnat {
  std::string ns;
  Ipv4Address from_ip;
  std::uint16_t from_port = 0;
  Ipv4Address to_ip;
  std::uint16_t to_port = 0;
  bool operator==(const RemoveDnat&) const = default;
};

struct SetIsolation {
  IsolationPolicy policy = IsolationPolicy::isolated();
  bool operator==(const SetIsolation&) const = default;
};

struct RestoreVmSnapshot {
  VmRole role = VmRole::victim;
  std::string vm;
  std::string snapshot;
  bool operator==(const RestoreVmSnapshot&) const = default;
};

} // namespace ops

using BackendOp =
    std::variant<ops::CreateBridge, ops::DeleteBridge, ops::CreateTap, ops::DeleteTap,
                 ops::AttachToBridge, ops::SetPromiscuous, ops::EnableMirroring,
                 ops::DisableMirroring, ops::BlockArpExceptBridge, ops::UnblockArp,
                 ops::ReserveDhcp, ops::ReleaseDhcp, ops::CreateNamespace, ops::RemoveNamespace,
                 ops::CreateVethPair, ops::MoveToNamespace, ops::AssignAddress, ops::LinkUp,
                 ops::AddDnat, ops::RemoveDnat, ops::SetIsolation, ops::RestoreVmSnapshot>;

using Plan = std::vector<BackendOp>;

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

inline const char* op_name(const BackendOp& op) noexcept {
  static constexpr const char* names[] = {
      "CreateBridge",   "DeleteBridge",   "CreateTap",       "DeleteTap",
      "AttachToBridge", "SetPromiscuous", "EnableMirroring", "DisableMirroring",
      "BlockArpExceptBridge", "UnblockArp", "ReserveDhcp",   "ReleaseDhcp",
      "CreateNamespace", "RemoveNamespace", "CreateVethPair", "MoveToNamespace",
      "AssignAddress",  "LinkUp",         "AddDnat",         "RemoveDnat",
      "SetIsolation",   "RestoreVmSnapshot"};
  static_assert(std::size(names) == std::variant_size_v<BackendOp>);
  return names[op.index()];
}

// -- Text form -------------------------------------------------------------------
//
// One op per line: the op name followed by space-separated key=value fields in
// a fixed order, e.g.
//
//   AddDnat ns=tlns2 from=192.165.15.2:2121 to=192.165.15.12:21
//
// Values never contain blanks, so the form parses back unambiguously.

namespace detail {

inline std::string endpoint(Ipv4Address ip, std::uint16_t port) {
  return ip.to_string() + ":" + std::to_string(port);
}

inline std::string ns_field(const std::optional<std::string>& ns) {
  return ns ? " ns=" + *ns : std::string{};
}

} // namespace detail

inline std::string to_text(const BackendOp& op) {
  using detail::endpoint;
  using detail::ns_field;
  std::string body = std::visit(
      overloaded{
          [](const ops::CreateBridge& o) {
            return "name=" + o.name + " mac=" + o.mac.to_string() + " gateway=" +
                   o.gateway.to_string() + " prefix=" + std::to_string(o.prefix);
          },
          [](const ops::DeleteBridge& o) {
            return "name=" + o.name + " gateway=" + o.gateway.to_string() +
                   " prefix=" + std::to_string(o.prefix);
          },
          [](const ops::CreateTap& o) { return "name=" + o.name + " mac=" + o.mac.to_string(); },
          [](const ops::DeleteTap& o) { return "name=" + o.name; },
          [](const ops::AttachToBridge& o) { return "link=" + o.link + " bridge=" + o.bridge; },
          [](const ops::SetPromiscuous& o) { return "link=" + o.link; },
          [](const ops::EnableMirroring& o) { return "bridge=" + o.bridge + " target=" + o.target; },
          [](const ops::DisableMirroring& o) { return "bridge=" + o.bridge; },
          [](const ops::BlockArpExceptBridge& o) {
            return "link=" + o.link + " bridge_ip=" + o.bridge_ip.to_string() +
                   " bridge_mac=" + o.bridge_mac.to_string();
          },
          [](const ops::UnblockArp& o) {
            return "link=" + o.link + " bridge_ip=" + o.bridge_ip.to_string() +
                   " bridge_mac=" + o.bridge_mac.to_string();
          },
          [](const ops::ReserveDhcp& o) {
            return "mac=" + o.mac.to_string() + " ip=" + o.ip.to_string() + " role=" + to_string(o.role);
          },
          [](const ops::ReleaseDhcp& o) {
            return "mac=" + o.mac.to_string() + " ip=" + o.ip.to_string() + " role=" + to_string(o.role);
          },
          [](const ops::CreateNamespace& o) { return "name=" + o.name; },
          [](const ops::RemoveNamespace& o) { return "name=" + o.name; },
          [](const ops::CreateVethPair& o) {
            return "outer=" + o.outer + " inner=" + o.inner + " inner_mac=" + o.inner_mac.to_string();
          },
          [](const ops::MoveToNamespace& o) { return "link=" + o.link + " ns=" + o.ns; },
          [](const ops::AssignAddress& o) {
            return "link=" + o.link + " ip=" + o.ip.to_string() + " prefix=" + std::to_string(o.prefix) +
                   ns_field(o.ns);
          },
          [](const ops::LinkUp& o) { return "link=" + o.link + ns_field(o.ns); },
          [](const ops::AddDnat& o) {
            return "ns=" + o.ns + " from=" + endpoint(o.from_ip, o.from_port) + " to=" +
                   endpoint(o.to_ip, o.to_port);
          },
          [](const ops::RemoveDnat& o) {
            return "ns=" + o.ns + " from=" + endpoint(o.from_ip, o.from_port) + " to=" +
                   endpoint(o.to_ip, o.to_port);
          },
          [](const ops::SetIsolation& o) {
            return o.policy.allows_outbound() ? "mode=outbound uplink=" + o.policy.uplink()
                                              : std::string("mode=isolated");
          },
          [](const ops::RestoreVmSnapshot& o) {
            return std::string("role=") + to_string(o.role) + " vm=" + o.vm + " snapshot=" + o.snapshot;
          },
      },
      op);
  return std::string(op_name(op)) + " " + body;
}

/// One op per line, newline-terminated.
inline std::string to_text(const Plan& plan) {
  std::string out;
  for (const auto& op : plan) {
    out += to_text(op);
    out += '\n';
  }
  return out;
}

namespace detail {

class FieldReader {
public:
  explicit FieldReader(std::string_view line) : line_(line) {
    std::size_t pos = 0;
    bool first = true;
    while (pos < line.size()) {
      const auto end = std::min(line.find(' ', pos), line.size());
      const auto token = line.substr(pos, end - pos);
      pos = end + 1;
      if (token.empty())
        continue;
      if (first) {
        name_ = std::string(token);
        first = false;
        continue;
      }
      const auto eq = token.find('=');
      if (eq == std::string_view::npos || eq == 0)
        throw fail("expected key=value, got '" + std::string(token) + "'");
      if (!fields_.emplace(std::string(token.substr(0, eq)), std::string(token.substr(eq + 1))).second)
        throw fail("duplicate field '" + std::string(token.substr(0, eq)) + "'");
    }
  }

  const std::string& name() const noexcept { return name_; }

  std::string str(const std::string& key) {
    auto it = fields_.find(key);
    if (it == fields_.end())
      throw fail("missing field '" + key + "'");
    auto value = it->second;
    fields_.erase(it);
    return value;
  }

  std::optional<std::string> opt(const std::string& key) {
    if (!fields_.contains(key))
      return std::nullopt;
    return str(key);
  }

  Ipv4Address ip(const std::string& key) { return Ipv4Address::parse(str(key)); }
  MacAddress mac(const std::string& key) { return MacAddress::parse(str(key)); }

  int integer(const std::string& key) {
    const auto text = str(key);
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
      throw fail("field '" + key + "' is not an integer");
    return value;
  }

  std::pair<Ipv4Address, std::uint16_t> endpoint(const std::string& key) {
    const auto text = str(key);
    const auto colon = text.rfind(':');
    if (colon == std::string::npos)
      throw fail("field '" + key + "' is not ip:port");
    long long port = 0;
    auto [ptr, ec] = std::from_chars(text.data() + colon + 1, text.data() + text.size(), port);
    if (ec != std::errc{} || ptr != text.data() + text.size())
      throw fail("field '" + key + "' has a malformed port");
    return {Ipv4Address::parse(std::string_view(text).substr(0, colon)), checked_port(port)};
  }

  void done() const {
    if (!fields_.empty())
      throw fail("unexpected field '" + fields_.begin()->first + "'");
  }

  Error fail(const std::string& why) const {
    return Error(Errc::parse, "plan line '" + std::string(line_) + "': " + why);
  }

private:
  std::string_view line_;
  std::string name_;
  std::map<std::string, std::string> fields_;
};

} // namespace detail

/// Inverse of `to_text(const BackendOp&)`.
inline BackendOp parse_op(std::string_view line) {
  detail::FieldReader f(line);
  const auto& name = f.name();
  BackendOp op;
  if (name == "CreateBridge") {
    ops::CreateBridge o;
    o.name = f.str("name");
    o.mac = f.mac("mac");
    o.gateway = f.ip("gateway");
    o.prefix = f.integer("prefix");
    op = o;
  } else if (name == "DeleteBridge") {
    ops::DeleteBridge o;
    o.name = f.str("name");
    o.gateway = f.ip("gateway");
    o.prefix = f.integer("prefix");
    op = o;
  } else if (name == "CreateTap") {
    ops::CreateTap o;
    o.name = f.str("name");
    o.mac = f.mac("mac");
    op = o;
  } else if (name == "DeleteTap") {
    op = ops::DeleteTap{f.str("name")};
  } else if (name == "AttachToBridge") {
    ops::AttachToBridge o;
    o.link = f.str("link");
    o.bridge = f.str("bridge");
    op = o;
  } else if (name == "SetPromiscuous") {
    op = ops::SetPromiscuous{f.str("link")};
  } else if (name == "EnableMirroring") {
    ops::EnableMirroring o;
    o.bridge = f.str("bridge");
    o.target = f.str("target");
    op = o;
  } else if (name == "DisableMirroring") {
    op = ops::DisableMirroring{f.str("bridge")};
  } else if (name == "BlockArpExceptBridge" || name == "UnblockArp") {
    auto link = f.str("link");
    auto ip = f.ip("bridge_ip");
    auto mac = f.mac("bridge_mac");
    if (name == "UnblockArp")
      op = ops::UnblockArp{link, ip, mac};
    else
      op = ops::BlockArpExceptBridge{link, ip, mac};
  } else if (name == "ReserveDhcp" || name == "ReleaseDhcp") {
    auto mac = f.mac("mac");
    auto ip = f.ip("ip");
    auto role = parse_role(f.str("role"));
    if (name == "ReleaseDhcp")
      op = ops::ReleaseDhcp{mac, ip, role};
    else
      op = ops::ReserveDhcp{mac, ip, role};
  } else if (name == "CreateNamespace") {
    op = ops::CreateNamespace{f.str("name")};
  } else if (name == "RemoveNamespace") {
    op = ops::RemoveNamespace{f.str("name")};
  } else if (name == "CreateVethPair") {
    ops::CreateVethPair o;
    o.outer = f.str("outer");
    o.inner = f.str("inner");
    o.inner_mac = f.mac("inner_mac");
    op = o;
  } else if (name == "MoveToNamespace") {
    ops::MoveToNamespace o;
    o.link = f.str("link");
    o.ns = f.str("ns");
    op = o;
  } else if (name == "AssignAddress") {
    ops::AssignAddress o;
    o.link = f.str("link");
    o.ip = f.ip("ip");
    o.prefix = f.integer("prefix");
    o.ns = f.opt("ns");
    op = o;
  } else if (name == "LinkUp") {
    ops::LinkUp o;
    o.link = f.str("link");
    o.ns = f.opt("ns");
    op = o;
  } else if (name == "AddDnat" || name == "RemoveDnat") {
    auto ns = f.str("ns");
    auto [from_ip, from_port] = f.endpoint("from");
    auto [to_ip, to_port] = f.endpoint("to");
    if (name == "RemoveDnat")
      op = ops::RemoveDnat{ns, from_ip, from_port, to_ip, to_port};
    else
      op = ops::AddDnat{ns, from_ip, from_port, to_ip, to_port};
  } else if (name == "SetIsolation") {
    const auto mode = f.str("mode");
    if (mode == "isolated")
      op = ops::SetIsolation{IsolationPolicy::isolated()};
    else if (mode == "outbound")
      op = ops::SetIsolation{IsolationPolicy::outbound_only(f.str("uplink"))};
    else
      throw f.fail("unknown isolation mode '" + mode + "'");
  } else if (name == "RestoreVmSnapshot") {
    ops::RestoreVmSnapshot o;
    o.role = parse_role(f.str("role"));
    o.vm = f.str("vm");
    o.snapshot = f.str("snapshot");
    op = o;
  } else {
    throw f.fail("unknown op '" + name + "'");
  }
  f.done();
  return op;
}

inline Plan parse_plan(std::string_view text) {
  Plan plan;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos)
      end = text.size();
    const auto line = text.substr(pos, end - pos);
    if (!line.empty())
      plan.push_back(parse_op(line));
    pos = end + 1;
  }
  return plan;
}

// -- Ordering ----------------------------------------------------------------------

/// Artifacts present before a plan runs.
struct PlanContext {
  std::map<std::string, std::optional<std::string>> links; // name -> namespace
  std::map<std::string, std::string> veth_peers;
  std::set<std::string> namespaces;
  std::optional<std::string> bridge;
};

/// Checks that every op references only artifacts created earlier in the plan
/// or present in `context`, and creates nothing that already exists. Returns a
/// description of each offending op; empty means well ordered.
inline std::vector<std::string> ordering_violations(const Plan& plan, PlanContext context = {}) {
  std::vector<std::string> out;
  auto& links = context.links;
  auto& ns = context.namespaces;
  std::size_t index = 0;
  auto complain = [&](const BackendOp& op, const std::string& why) {
    out.push_back("op " + std::to_string(index) + " " + to_text(op) + ": " + why);
  };
  auto need_link = [&](const BackendOp& op, const std::string& name, const std::optional<std::string>& in_ns = std::nullopt) {
    auto it = links.find(name);
    if (it == links.end())
      complain(op, "link " + name + " not created yet");
    else if (it->second != in_ns)
      complain(op, "link " + name + " is not in " + (in_ns ? "namespace " + *in_ns : "the default namespace"));
  };
  auto need_ns = [&](const BackendOp& op, const std::string& name) {
    if (!ns.contains(name))
      complain(op, "namespace " + name + " not created yet");
  };
  auto need_bridge = [&](const BackendOp& op, const std::string& name) {
    if (context.bridge != name)
      complain(op, "bridge " + name + " not created yet");
  };
  auto create_link = [&](const BackendOp& op, const std::string& name) {
    if (!links.emplace(name, std::nullopt).second)
      complain(op, "link " + name + " already exists");
  };
  auto drop_link = [&](const std::string& name) {
    links.erase(name);
    if (auto peer = context.veth_peers.find(name); peer != context.veth_peers.end()) {
      links.erase(peer->second);
      context.veth_peers.erase(peer->second);
      context.veth_peers.erase(peer);
    }
  };

  for (const auto& op : plan) {
    std::visit(
        overloaded{
            [&](const ops::CreateBridge& o) {
              if (context.bridge)
                complain(op, "a bridge already exists");
              create_link(op, o.name);
              context.bridge = o.name;
            },
            [&](const ops::DeleteBridge& o) {
              need_bridge(op, o.name);
              links.erase(o.name);
              context.bridge.reset();
            },
            [&](const ops::CreateTap& o) { create_link(op, o.name); },
            [&](const ops::DeleteTap& o) {
              need_link(op, o.name);
              links.erase(o.name);
            },
            [&](const ops::AttachToBridge& o) {
              need_link(op, o.link);
              need_bridge(op, o.bridge);
            },
            [&](const ops::SetPromiscuous& o) { need_link(op, o.link); },
            [&](const ops::EnableMirroring& o) {
              need_bridge(op, o.bridge);
              need_link(op, o.target);
            },
            [&](const ops::DisableMirroring& o) { need_bridge(op, o.bridge); },
            [&](const ops::BlockArpExceptBridge& o) { need_link(op, o.link); },
            [&](const ops::UnblockArp& o) { need_link(op, o.link); },
            [&](const ops::ReserveDhcp&) {},
            [&](const ops::ReleaseDhcp&) {},
            [&](const ops::CreateNamespace& o) {
              if (!ns.insert(o.name).second)
                complain(op, "namespace " + o.name + " already exists");
            },
            [&](const ops::RemoveNamespace& o) {
              need_ns(op, o.name);
              ns.erase(o.name);
              std::vector<std::string> inside;
              for (const auto& [name, where] : links)
                if (where == o.name)
                  inside.push_back(name);
              for (const auto& name : inside)
                drop_link(name);
            },
            [&](const ops::CreateVethPair& o) {
              create_link(op, o.outer);
              create_link(op, o.inner);
              context.veth_peers[o.outer] = o.inner;
              context.veth_peers[o.inner] = o.outer;
            },
            [&](const ops::MoveToNamespace& o) {
              need_link(op, o.link);
              need_ns(op, o.ns);
              if (auto it = links.find(o.link); it != links.end())
                it->second = o.ns;
            },
            [&](const ops::AssignAddress& o) {
              if (o.ns)
                need_ns(op, *o.ns);
              need_link(op, o.link, o.ns);
            },
            [&](const ops::LinkUp& o) {
              if (o.ns)
                need_ns(op, *o.ns);
              need_link(op, o.link, o.ns);
            },
            [&](const ops::AddDnat& o) { need_ns(op, o.ns); },
            [&](const ops::RemoveDnat& o) { need_ns(op, o.ns); },
            [&](const ops::SetIsolation&) {},
            [&](const ops::RestoreVmSnapshot&) {},
        },
        op);
    ++index;
  }
  return out;
}

/// Counts of each op kind, keyed by op name.
inline std::map<std::string, std::size_t> census(const Plan& plan) {
  std::map<std::string, std::size_t> out;
  for (const auto& op : plan)
    ++out[op_name(op)];
  return out;
}

} // namespace threatlab
