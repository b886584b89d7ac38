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

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "threatlab/error.hpp"
#include "threatlab/model.hpp"
#include "threatlab/plan.hpp"

namespace threatlab::shell {

// Firewall chains owning every lab rule on the host.
inline constexpr std::string_view forward_chain = "TLAB-FWD";
inline constexpr std::string_view nat_chain = "TLAB-NAT";
inline constexpr std::string_view dhcp_hosts_file = "/etc/threatlab/dhcp-hosts";
inline constexpr std::size_t max_line = 512;
inline constexpr std::string_view op_marker = "# op ";

struct CommandScript {
  std::string header;
  std::vector<std::string> lines;

  std::string text() const {
    std::string out = header + "\n";
    for (const auto& line : lines)
      out += line + "\n";
    return out;
  }
};

/// FNV-1a over the plan's text form, as 16 hex digits.
inline std::string plan_hash(const Plan& plan) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : to_text(plan)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::string cidr(Ipv4Address ip, int prefix) {
  return ip.to_string() + "/" + std::to_string(prefix);
}

inline std::string subnet(Ipv4Address gateway, int prefix) {
  return cidr(Ipv4Address{gateway.value() & Netmask::from_prefix(prefix).value()}, prefix);
}

inline std::string in_ns(const std::optional<std::string>& ns) {
  return ns ? "ip netns exec " + *ns + " " : std::string{};
}

inline std::string fwd() { return std::string(forward_chain); }
inline std::string natc() { return std::string(nat_chain); }

inline std::vector<std::string> dnat_rules(char verb, const std::string& ns, Ipv4Address from_ip,
                                           std::uint16_t from_port, Ipv4Address to_ip, std::uint16_t to_port) {
  const std::string prefix = "ip netns exec " + ns + " iptables -t nat -" + verb;
  return {prefix + " PREROUTING -d " + from_ip.to_string() + "/32 -p tcp --dport " + std::to_string(from_port) +
              " -j DNAT --to-destination " + to_ip.to_string() + ":" + std::to_string(to_port),
          prefix + " POSTROUTING -d " + to_ip.to_string() + "/32 -p tcp --dport " + std::to_string(to_port) +
              " -j MASQUERADE"};
}

inline std::vector<std::string> arp_rules(char verb, const std::string& link, Ipv4Address bridge_ip,
                                          const MacAddress& bridge_mac) {
  const std::string a = std::string("arptables -") + verb;
  return {a + " FORWARD -o " + link + " --source-mac " + bridge_mac.to_string() + " -j ACCEPT",
          a + " FORWARD -o " + link + " -j DROP",
          a + " FORWARD -i " + link + " ! --destination-ip " + bridge_ip.to_string() + " -j DROP"};
}

inline std::string dhcp_entry(const MacAddress& mac, Ipv4Address ip, VmRole role) {
  return mac.to_string() + "," + ip.to_string() + "," + to_string(role);
}

} // namespace detail

/// Command lines realizing one op.
inline std::vector<std::string> commands_for(const BackendOp& op) {
  using namespace detail;
  return std::visit(
      overloaded{
          [](const ops::CreateBridge& o) -> std::vector<std::string> {
            const auto net = subnet(o.gateway, o.prefix);
            return {"ip link add name " + o.name + " type bridge",
                    "ip link set dev " + o.name + " address " + o.mac.to_string(),
                    "ip addr add " + cidr(o.gateway, o.prefix) + " dev " + o.name,
                    "ip link set dev " + o.name + " up",
                    "iptables -N " + fwd(),
                    "iptables -I FORWARD -i " + o.name + " -j " + fwd(),
                    "iptables -I FORWARD -o " + o.name + " -j " + fwd(),
                    "iptables -t nat -N " + natc(),
                    "iptables -t nat -I POSTROUTING -s " + net + " ! -d " + net + " -j " + natc()};
          },
          [](const ops::DeleteBridge& o) -> std::vector<std::string> {
            const auto net = subnet(o.gateway, o.prefix);
            return {"iptables -t nat -D POSTROUTING -s " + net + " ! -d " + net + " -j " + natc(),
                    "iptables -t nat -F " + natc(),
                    "iptables -t nat -X " + natc(),
                    "iptables -D FORWARD -o " + o.name + " -j " + fwd(),
                    "iptables -D FORWARD -i " + o.name + " -j " + fwd(),
                    "iptables -F " + fwd(),
                    "iptables -X " + fwd(),
                    "ip link del dev " + o.name};
          },
          [](const ops::CreateTap& o) -> std::vector<std::string> {
            return {"ip tuntap add dev " + o.name + " mode tap",
                    "ip link set dev " + o.name + " address " + o.mac.to_string(),
                    "ip link set dev " + o.name + " up"};
          },
          [](const ops::DeleteTap& o) -> std::vector<std::string> {
            return {"ip tuntap del dev " + o.name + " mode tap"};
          },
          [](const ops::AttachToBridge& o) -> std::vector<std::string> {
            return {"ip link set dev " + o.link + " master " + o.bridge};
          },
          [](const ops::SetPromiscuous& o) -> std::vector<std::string> {
            return {"ip link set dev " + o.link + " promisc on"};
          },
          [](const ops::EnableMirroring& o) -> std::vector<std::string> {
            const auto mirror = " protocol all u32 match u32 0 0 action mirred egress mirror dev " + o.target;
            return {"tc qdisc add dev " + o.bridge + " handle ffff: ingress",
                    "tc filter add dev " + o.bridge + " parent ffff:" + mirror,
                    "tc qdisc add dev " + o.bridge + " handle 1: root prio",
                    "tc filter add dev " + o.bridge + " parent 1:" + mirror};
          },
          [](const ops::DisableMirroring& o) -> std::vector<std::string> {
            return {"tc qdisc del dev " + o.bridge + " handle ffff: ingress",
                    "tc qdisc del dev " + o.bridge + " handle 1: root"};
          },
          [](const ops::BlockArpExceptBridge& o) { return arp_rules('A', o.link, o.bridge_ip, o.bridge_mac); },
          [](const ops::UnblockArp& o) { return arp_rules('D', o.link, o.bridge_ip, o.bridge_mac); },
          [](const ops::ReserveDhcp& o) -> std::vector<std::string> {
            return {"echo '" + dhcp_entry(o.mac, o.ip, o.role) + "' >> " + std::string(dhcp_hosts_file),
                    "pkill -HUP -x dnsmasq"};
          },
          [](const ops::ReleaseDhcp& o) -> std::vector<std::string> {
            return {"sed -i '/^" + dhcp_entry(o.mac, o.ip, o.role) + "$/d' " + std::string(dhcp_hosts_file),
                    "pkill -HUP -x dnsmasq"};
          },
          [](const ops::CreateNamespace& o) -> std::vector<std::string> {
            return {"ip netns add " + o.name, "ip netns exec " + o.name + " sysctl -qw net.ipv4.ip_forward=1"};
          },
          [](const ops::RemoveNamespace& o) -> std::vector<std::string> { return {"ip netns del " + o.name}; },
          [](const ops::CreateVethPair& o) -> std::vector<std::string> {
            return {"ip link add " + o.outer + " type veth peer name " + o.inner,
                    "ip link set dev " + o.inner + " address " + o.inner_mac.to_string()};
          },
          [](const ops::MoveToNamespace& o) -> std::vector<std::string> {
            return {"ip link set dev " + o.link + " netns " + o.ns};
          },
          [](const ops::AssignAddress& o) -> std::vector<std::string> {
            return {in_ns(o.ns) + "ip addr add " + cidr(o.ip, o.prefix) + " dev " + o.link};
          },
          [](const ops::LinkUp& o) -> std::vector<std::string> {
            return {in_ns(o.ns) + "ip link set dev " + o.link + " up"};
          },
          [](const ops::AddDnat& o) { return dnat_rules('A', o.ns, o.from_ip, o.from_port, o.to_ip, o.to_port); },
          [](const ops::RemoveDnat& o) { return dnat_rules('D', o.ns, o.from_ip, o.from_port, o.to_ip, o.to_port); },
          [](const ops::SetIsolation& o) -> std::vector<std::string> {
            std::vector<std::string> out = {"iptables -F " + fwd(), "iptables -t nat -F " + natc()};
            if (o.policy.allows_outbound()) {
              const auto& up = o.policy.uplink();
              out.push_back("iptables -A " + fwd() + " -m conntrack --ctstate ESTABLISHED,RELATED -j ACCEPT");
              out.push_back("iptables -A " + fwd() + " -o " + up + " -j ACCEPT");
              out.push_back("iptables -A " + fwd() + " -j DROP");
              out.push_back("iptables -t nat -A " + natc() + " -o " + up + " -j MASQUERADE");
            } else {
              out.push_back("iptables -A " + fwd() + " -j DROP");
            }
            return out;
          },
          [](const ops::RestoreVmSnapshot& o) -> std::vector<std::string> {
            return {"VBoxManage controlvm " + o.vm + " poweroff",
                    "VBoxManage snapshot " + o.vm + " restore " + o.snapshot,
                    "VBoxManage startvm " + o.vm + " --type headless"};
          },
      },
      op);
}

/// Renders `plan` as a shell script. Each op is introduced by a comment
/// carrying its text form, so the op sequence can be recovered from the script.
inline CommandScript render_commands(const Plan& plan) {
  CommandScript script;
  script.header = "# threatlab plan " + plan_hash(plan) + " (" + std::to_string(plan.size()) + " ops)";
  for (std::size_t i = 0; i < plan.size(); ++i) {
    script.lines.push_back(std::string(op_marker) + std::to_string(i) + ": " + to_text(plan[i]));
    for (auto& line : commands_for(plan[i]))
      script.lines.push_back(std::move(line));
  }
  for (const auto& line : script.lines)
    if (line.size() > max_line)
      throw Error(Errc::contract, "rendered line exceeds " + std::to_string(max_line) + " characters");
  return script;
}

/// Recovers the op sequence from the op-boundary comments of a script.
inline Plan parse_op_boundaries(std::string_view script) {
  Plan plan;
  std::size_t pos = 0;
  while (pos < script.size()) {
    auto end = script.find('\n', pos);
    if (end == std::string_view::npos)
      end = script.size();
    const auto line = script.substr(pos, end - pos);
    pos = end + 1;
    if (!line.starts_with(op_marker))
      continue;
    const auto colon = line.find(": ");
    if (colon == std::string_view::npos)
      throw Error(Errc::parse, "malformed op marker '" + std::string(line) + "'");
    plan.push_back(parse_op(line.substr(colon + 2)));
  }
  return plan;
}

enum class VmAction { restore, start, stop };

inline std::string render_vm_control(const LabConfig& config, VmRole role, VmAction action) {
  const auto& vm = config.slot(role).vm_name;
  switch (action) {
    case VmAction::restore: return "VBoxManage snapshot " + vm + " restore " + config.snapshot_name;
    case VmAction::start: return "VBoxManage startvm " + vm + " --type headless";
    case VmAction::stop: return "VBoxManage controlvm " + vm + " poweroff";
  }
  return {};
}

} // namespace threatlab::shell
