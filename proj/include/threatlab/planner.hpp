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
#include <array>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "threatlab/error.hpp"
#include "threatlab/model.hpp"
#include "threatlab/plan.hpp"

namespace threatlab {

/// Ops added per redirector host before any redirection.
inline constexpr std::size_t ops_per_host = 7;
/// Ops in a lab with no redirectors.
inline constexpr std::size_t ops_per_lab = 14;

namespace detail {

inline void append_host_ops(Plan& plan, const LabConfig& config, Ipv4Address ip, std::uint32_t ordinal) {
  const auto gen = redirector_names(ordinal);
  const int prefix = config.network.cidr();
  plan.emplace_back(ops::CreateNamespace{gen.ns});
  plan.emplace_back(ops::CreateVethPair{gen.veth_outer, gen.veth_inner, gen.inner_mac});
  plan.emplace_back(ops::MoveToNamespace{gen.veth_inner, gen.ns});
  plan.emplace_back(ops::AttachToBridge{gen.veth_outer, config.bridge_name});
  plan.emplace_back(ops::AssignAddress{gen.veth_inner, ip, prefix, gen.ns});
  plan.emplace_back(ops::LinkUp{gen.veth_outer, std::nullopt});
  plan.emplace_back(ops::LinkUp{gen.veth_inner, gen.ns});
}

inline ops::AddDnat dnat_for(const LabConfig& config, const RedirectorSpec& host, const PortRedirection& r) {
  return {redirector_names(host.ordinal).ns, host.ip, r.exposed_port,
          config.slot(VmRole::victim).reserved_ip, r.victim_port};
}

inline std::map<std::uint32_t, const RedirectorSpec*> by_ordinal(const LabConfig& config) {
  std::map<std::uint32_t, const RedirectorSpec*> out;
  for (const auto& r : config.redirectors)
    out.emplace(r.ordinal, &r);
  return out;
}

inline bool contains_dnat(const std::vector<ops::AddDnat>& rules, const ops::AddDnat& rule) {
  return std::find(rules.begin(), rules.end(), rule) != rules.end();
}

inline std::vector<ops::AddDnat> dnats_of(const LabConfig& config, const RedirectorSpec& host) {
  std::vector<ops::AddDnat> out;
  for (const auto& r : host.redirections)
    out.push_back(dnat_for(config, host, r));
  return out;
}

/// Ops turning the system built for `before` (nothing when null) into the
/// system for `after`. Only artifacts whose defining fields changed are torn
/// down and re-created.
inline Plan diff_plan(const LabConfig* before, const LabConfig& after) {
  Plan plan;
  const bool fresh = before == nullptr;
  auto bridge_key = [](const LabConfig& c) {
    return std::tuple(c.bridge_name, c.bridge_mac, c.network.gateway(), c.network.cidr());
  };
  const bool bridge_changed = fresh || bridge_key(*before) != bridge_key(after);

  std::array<bool, 3> tap_changed{};
  std::array<bool, 3> dhcp_changed{};
  for (auto role : all_roles) {
    const auto i = static_cast<std::size_t>(role);
    const auto& next = after.slot(role);
    tap_changed[i] = fresh || before->slot(role).tap_name != next.tap_name ||
                     before->slot(role).tap_mac != next.tap_mac;
    dhcp_changed[i] = fresh || before->slot(role).tap_mac != next.tap_mac ||
                      before->slot(role).reserved_ip != next.reserved_ip;
  }
  const auto scanner = static_cast<std::size_t>(VmRole::scanner);
  const bool monitor_redo = bridge_changed || tap_changed[scanner];
  const bool isolation_redo = bridge_changed || before->isolation != after.isolation;

  const auto old_hosts = fresh ? std::map<std::uint32_t, const RedirectorSpec*>{} : by_ordinal(*before);
  const auto new_hosts = by_ordinal(after);
  auto rebuilt = [&](std::uint32_t ordinal) {
    auto old_it = old_hosts.find(ordinal);
    auto new_it = new_hosts.find(ordinal);
    if (old_it == old_hosts.end() || new_it == new_hosts.end())
      return false;
    return bridge_changed || old_it->second->ip != new_it->second->ip;
  };

  // Teardown, dependents first.
  for (const auto& [ordinal, host] : old_hosts) {
    auto next = new_hosts.find(ordinal);
    if (next == new_hosts.end() || rebuilt(ordinal))
      continue;
    const auto keep = dnats_of(after, *next->second);
    for (const auto& rule : dnats_of(*before, *host))
      if (!contains_dnat(keep, rule))
        plan.emplace_back(ops::RemoveDnat{rule.ns, rule.from_ip, rule.from_port, rule.to_ip, rule.to_port});
  }
  for (const auto& [ordinal, host] : old_hosts)
    if (!new_hosts.contains(ordinal) || rebuilt(ordinal))
      plan.emplace_back(ops::RemoveNamespace{redirector_names(ordinal).ns});
  if (!fresh && monitor_redo) {
    if (!bridge_changed)
      plan.emplace_back(ops::DisableMirroring{before->bridge_name});
    if (!tap_changed[scanner])
      plan.emplace_back(ops::UnblockArp{before->slot(VmRole::scanner).tap_name, before->network.gateway(),
                                        before->bridge_mac});
  }
  if (!fresh) {
    for (auto role : all_roles)
      if (dhcp_changed[static_cast<std::size_t>(role)])
        plan.emplace_back(ops::ReleaseDhcp{before->slot(role).tap_mac, before->slot(role).reserved_ip, role});
    for (auto role : all_roles)
      if (tap_changed[static_cast<std::size_t>(role)])
        plan.emplace_back(ops::DeleteTap{before->slot(role).tap_name});
    if (bridge_changed)
      plan.emplace_back(ops::DeleteBridge{before->bridge_name, before->network.gateway(), before->network.cidr()});
  }

  // Construction, dependencies first.
  if (bridge_changed)
    plan.emplace_back(ops::CreateBridge{after.bridge_name, after.bridge_mac, after.network.gateway(),
                                        after.network.cidr()});
  for (auto role : all_roles)
    if (tap_changed[static_cast<std::size_t>(role)])
      plan.emplace_back(ops::CreateTap{after.slot(role).tap_name, after.slot(role).tap_mac});
  for (auto role : all_roles)
    if (bridge_changed || tap_changed[static_cast<std::size_t>(role)])
      plan.emplace_back(ops::AttachToBridge{after.slot(role).tap_name, after.bridge_name});
  for (auto role : all_roles)
    if (dhcp_changed[static_cast<std::size_t>(role)])
      plan.emplace_back(ops::ReserveDhcp{after.slot(role).tap_mac, after.slot(role).reserved_ip, role});
  if (tap_changed[scanner])
    plan.emplace_back(ops::SetPromiscuous{after.slot(VmRole::scanner).tap_name});
  if (monitor_redo) {
    plan.emplace_back(ops::EnableMirroring{after.bridge_name, after.slot(VmRole::scanner).tap_name});
    plan.emplace_back(ops::BlockArpExceptBridge{after.slot(VmRole::scanner).tap_name, after.network.gateway(),
                                                after.bridge_mac});
  }
  if (isolation_redo)
    plan.emplace_back(ops::SetIsolation{after.isolation});

  for (const auto& [ordinal, host] : new_hosts) {
    auto prior = old_hosts.find(ordinal);
    if (prior == old_hosts.end() || rebuilt(ordinal)) {
      append_host_ops(plan, after, host->ip, ordinal);
      for (const auto& rule : dnats_of(after, *host))
        plan.emplace_back(rule);
    } else {
      const auto had = dnats_of(*before, *prior->second);
      for (const auto& rule : dnats_of(after, *host))
        if (!contains_dnat(had, rule))
          plan.emplace_back(rule);
    }
  }
  return plan;
}

inline void require_valid(const LabConfig& config, const char* what) {
  const auto violations = validate_config(config, SystemInventory{});
  if (violations.empty())
    return;
  std::string msg = std::string(what) + " needs a validated config:";
  for (const auto& v : violations)
    msg += "\n  " + v.to_string();
  throw Error(Errc::contract, msg);
}

} // namespace detail

/// Full construction plan for a validated config: bridge, VM taps with DHCP
/// reservations, scanner monitoring, isolation, then every redirector host in
/// ordinal order followed by its redirections.
inline Plan compile_network(const LabConfig& config) {
  detail::require_valid(config, "compile_network");
  return detail::diff_plan(nullptr, config);
}

/// The seven ops that bring up redirector `ordinal` at `ip`.
inline Plan plan_add_host(const LabConfig& config, Ipv4Address ip, std::uint32_t ordinal) {
  if (ordinal == 0)
    throw Error(Errc::contract, "host ordinals start at 1");
  if (ordinal > max_ordinal)
    throw Error(Errc::capacity, "host ordinal " + std::to_string(ordinal) + " exceeds " + std::to_string(max_ordinal));
  if (config.find_ordinal(ordinal) != nullptr)
    throw Error(Errc::conflict, "host ordinal " + std::to_string(ordinal) + " already in use");
  if (!in_pool(config.network, ip))
    throw Error(Errc::conflict, ip.to_string() + " is not an available address of " + config.network.to_string());
  if (const auto* owner = config.find_redirector(ip))
    throw Error(Errc::conflict, ip.to_string() + " already belongs to host " + std::to_string(owner->ordinal));
  const auto gen = redirector_names(ordinal);
  std::vector<std::string> taken = {config.bridge_name};
  for (const auto& slot : config.vm_slots)
    taken.push_back(slot.tap_name);
  for (const auto& name : {gen.veth_outer, gen.veth_inner})
    if (std::find(taken.begin(), taken.end(), name) != taken.end())
      throw Error(Errc::conflict, "generated interface name " + name + " is already used by the lab");
  Plan plan;
  detail::append_host_ops(plan, config, ip, ordinal);
  return plan;
}

/// A single DNAT exposing `to_port` of the victim as `from_port` of a host.
inline Plan plan_redirect(const LabConfig& config, Ipv4Address from_ip, long long from_port,
                          Ipv4Address to_ip, long long to_port) {
  const auto exposed = checked_port(from_port);
  const auto target = checked_port(to_port);
  const auto* host = config.find_redirector(from_ip);
  if (host == nullptr)
    throw Error(Errc::missing, from_ip.to_string() + " is not a redirector host");
  if (to_ip != config.slot(VmRole::victim).reserved_ip)
    throw Error(Errc::target, "redirections must target the victim " +
                                  config.slot(VmRole::victim).reserved_ip.to_string() + ", not " + to_ip.to_string());
  for (const auto& r : host->redirections)
    if (r.exposed_port == exposed)
      throw Error(Errc::conflict, from_ip.to_string() + ":" + std::to_string(exposed) + " is already redirected");
  return {ops::AddDnat{redirector_names(host->ordinal).ns, from_ip, exposed, to_ip, target}};
}

inline Plan plan_set_isolation(const IsolationPolicy& policy) { return {ops::SetIsolation{policy}}; }

/// The config a reconfiguration actually builds: scalar settings from
/// `new_config`, every host of `old_config` (sorted by ordinal) plus hosts only
/// `new_config` declares. Hosts keep their addresses when all of them still fit
/// the new pool; otherwise they are renumbered in ordinal order from the start
/// of the pool. Redirections always target the new victim reservation.
inline LabConfig reconfigured_config(const LabConfig& old_config, const LabConfig& new_config) {
  LabConfig out = new_config;
  std::vector<RedirectorSpec> carried = old_config.redirectors;
  std::sort(carried.begin(), carried.end(), [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
  std::vector<RedirectorSpec> extra;
  for (const auto& r : new_config.redirectors)
    if (old_config.find_ordinal(r.ordinal) == nullptr)
      extra.push_back(r);

  const auto capacity = pool_size(new_config.network);
  if (carried.size() + extra.size() > capacity)
    throw Error(Errc::capacity, std::to_string(carried.size() + extra.size()) + " hosts do not fit the " +
                                    std::to_string(capacity) + "-address pool of " + new_config.network.to_string());

  std::set<Ipv4Address> taken;
  for (const auto& r : extra)
    taken.insert(r.ip);
  const bool keep = std::all_of(carried.begin(), carried.end(), [&](const RedirectorSpec& r) {
    return in_pool(new_config.network, r.ip) && !taken.contains(r.ip);
  });
  if (!keep) {
    std::uint32_t next = 0;
    for (auto& r : carried) {
      while (taken.contains(pool_address(new_config.network, next)))
        ++next;
      r.ip = pool_address(new_config.network, next++);
    }
  }
  out.redirectors = std::move(carried);
  out.redirectors.insert(out.redirectors.end(), extra.begin(), extra.end());
  std::sort(out.redirectors.begin(), out.redirectors.end(),
            [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
  return out;
}

/// Migrates the system built for `old_config` to `reconfigured_config(old,
/// new)`. VMs are never restarted.
inline Plan plan_reconfigure(const LabConfig& old_config, const LabConfig& new_config) {
  const auto target = reconfigured_config(old_config, new_config);
  detail::require_valid(target, "plan_reconfigure");
  return detail::diff_plan(&old_config, target);
}

/// Resets only the VMs; redirector hosts stay up.
inline Plan plan_reset(const LabConfig& config) {
  Plan plan;
  for (auto role : all_roles)
    plan.emplace_back(ops::RestoreVmSnapshot{role, config.slot(role).vm_name, config.snapshot_name});
  return plan;
}

} // namespace threatlab
