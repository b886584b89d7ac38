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

// Lab description files.
//
//   # comment
//   bridgeName        = "mybridge"
//   bridgeMAC         = "00:50:56:c0:aa:01"
//   networkAddress    = "192.165.15.0"
//   netmask           = "255.255.255.240"
//   tunTapNameVictim  = "tunVictim"         (also Attacker, Scanner)
//   macTapVictim      = "00:60:67:34:12:44" (also Attacker, Scanner)
//   vmNameVictim      = "metasploitable"    (optional; defaults to the role)
//   snapshot          = "clean"             (optional)
//   isolation         = isolated | outbound (optional; default isolated)
//   uplink            = "wlp2s0"            (required for outbound)
//   victimServices    = 21 22 23            (blank- or comma-separated)
//
//   [host 2]
//   ip = 192.165.15.2                       (optional; next free address)
//   redirect 11 21
//   redirect 22 22
//
// Values may be double-quoted. testIP, testNM, testMACBridge and
// testMACTap<Role> are accepted as aliases, as is hostInterfaceName for uplink.

#pragma once

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "threatlab/error.hpp"
#include "threatlab/model.hpp"

namespace threatlab {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_blank(std::string_view s, bool commas = false) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto sep = [&](char c) { return std::isspace(static_cast<unsigned char>(c)) || (commas && c == ','); };
  while (i < s.size()) {
    while (i < s.size() && sep(s[i]))
      ++i;
    const auto start = i;
    while (i < s.size() && !sep(s[i]))
      ++i;
    if (i > start)
      out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline long long parse_integer(std::string_view text, const std::string& where) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
    throw Error(Errc::parse, where + ": expected an integer, got '" + std::string(text) + "'");
  return v;
}

inline const std::map<std::string, std::string, std::less<>>& config_aliases() {
  static const std::map<std::string, std::string, std::less<>> aliases = {
      {"testIP", "networkAddress"},
      {"testNM", "netmask"},
      {"testMACBridge", "bridgeMAC"},
      {"testMACTapVictim", "macTapVictim"},
      {"testMACTapAttacker", "macTapAttacker"},
      {"testMACTapScanner", "macTapScanner"},
      {"hostInterfaceName", "uplink"},
  };
  return aliases;
}

inline const std::set<std::string, std::less<>>& config_keys() {
  static const std::set<std::string, std::less<>> keys = {
      "bridgeName",     "bridgeMAC",      "networkAddress",   "netmask",
      "tunTapNameVictim", "tunTapNameAttacker", "tunTapNameScanner",
      "macTapVictim",   "macTapAttacker", "macTapScanner",
      "vmNameVictim",   "vmNameAttacker", "vmNameScanner",
      "snapshot",       "isolation",      "uplink",           "victimServices"};
  return keys;
}

inline std::string role_suffix(VmRole role) {
  switch (role) {
    case VmRole::victim: return "Victim";
    case VmRole::attacker: return "Attacker";
    case VmRole::scanner: return "Scanner";
  }
  return {};
}

} // namespace detail

inline LabConfig parse_lab_config(std::string_view text) {
  using detail::trim;
  struct HostDraft {
    std::uint32_t ordinal;
    std::optional<Ipv4Address> ip;
    std::vector<PortRedirection> redirections;
    std::size_t line;
  };
  std::map<std::string, std::pair<std::string, std::size_t>> values; // key -> (value, line)
  std::vector<HostDraft> hosts;
  std::set<std::uint32_t> seen_ordinals;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos)
      end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto where = "line " + std::to_string(line_no);
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty())
      continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw Error(Errc::parse, where + ": unterminated section header");
      auto words = detail::split_blank(line.substr(1, line.size() - 2));
      if (words.size() != 2 || words[0] != "host")
        throw Error(Errc::parse, where + ": expected [host <ordinal>]");
      const auto ordinal = detail::parse_integer(words[1], where);
      if (ordinal < 1 || ordinal > max_ordinal)
        throw Error(Errc::parse, where + ": host ordinal must be within 1-65535");
      if (!seen_ordinals.insert(static_cast<std::uint32_t>(ordinal)).second)
        throw Error(Errc::parse, where + ": host " + std::to_string(ordinal) + " defined twice");
      hosts.push_back({static_cast<std::uint32_t>(ordinal), std::nullopt, {}, line_no});
      continue;
    }

    if (!hosts.empty() && line.starts_with("redirect")) {
      auto words = detail::split_blank(line);
      if (words.size() != 3 || words[0] != "redirect")
        throw Error(Errc::parse, where + ": expected 'redirect <exposed_port> <victim_port>'");
      try {
        hosts.back().redirections.push_back(
            make_redirection(detail::parse_integer(words[1], where), detail::parse_integer(words[2], where)));
      } catch (const Error& e) {
        if (e.code() == Errc::parse)
          throw;
        throw Error(Errc::parse, where + ": " + e.what());
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::parse, where + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);

    if (!hosts.empty()) {
      if (key != "ip")
        throw Error(Errc::parse, where + ": unknown host key '" + key + "'");
      if (hosts.back().ip)
        throw Error(Errc::parse, where + ": host ip given twice");
      try {
        hosts.back().ip = Ipv4Address::parse(value);
      } catch (const Error& e) {
        throw Error(Errc::parse, where + ": " + e.what());
      }
      continue;
    }

    if (auto alias = detail::config_aliases().find(key); alias != detail::config_aliases().end())
      key = alias->second;
    if (!detail::config_keys().contains(key))
      throw Error(Errc::parse, where + ": unknown key '" + key + "'");
    if (!values.emplace(key, std::pair{std::string(value), line_no}).second)
      throw Error(Errc::parse, where + ": key '" + key + "' given twice");
  }

  auto required = [&](const std::string& key) -> const std::string& {
    auto it = values.find(key);
    if (it == values.end())
      throw Error(Errc::parse, "missing required key '" + key + "'");
    return it->second.first;
  };
  auto at = [&](const std::string& key) {
    auto it = values.find(key);
    return it == values.end() ? std::string("config") : "line " + std::to_string(it->second.second);
  };
  auto parsed = [&](const std::string& key, auto fn) {
    try {
      return fn(required(key));
    } catch (const Error& e) {
      if (e.code() != Errc::parse)
        throw Error(e.code(), at(key) + ": " + e.what());
      throw Error(Errc::parse, at(key) + ": " + e.what());
    }
  };

  const auto network = parsed("networkAddress", [&](const std::string& addr) {
    return derive_network(Ipv4Address::parse(addr), parsed("netmask", [](const std::string& m) { return Netmask::parse(m); }));
  });
  std::array<TapSpec, 3> taps;
  for (auto role : all_roles) {
    const auto suffix = detail::role_suffix(role);
    auto& tap = taps[static_cast<std::size_t>(role)];
    tap.name = required("tunTapName" + suffix);
    tap.mac = parsed("macTap" + suffix, [](const std::string& m) { return MacAddress::parse(m); });
    if (auto vm = values.find("vmName" + suffix); vm != values.end())
      tap.vm_name = vm->second.first;
  }

  IsolationPolicy isolation = IsolationPolicy::isolated();
  {
    const auto mode = values.contains("isolation") ? values.at("isolation").first : std::string("isolated");
    if (mode == "outbound") {
      if (!values.contains("uplink"))
        throw Error(Errc::parse, at("isolation") + ": outbound isolation needs an uplink");
      try {
        isolation = IsolationPolicy::outbound_only(values.at("uplink").first);
      } catch (const Error& e) {
        throw Error(Errc::parse, at("uplink") + ": " + e.what());
      }
    } else if (mode != "isolated") {
      throw Error(Errc::parse, at("isolation") + ": isolation must be 'isolated' or 'outbound'");
    }
  }

  auto config = make_lab_config(required("bridgeName"),
                                parsed("bridgeMAC", [](const std::string& m) { return MacAddress::parse(m); }),
                                network, std::move(taps), std::move(isolation));
  if (auto snap = values.find("snapshot"); snap != values.end())
    config.snapshot_name = snap->second.first;
  if (auto services = values.find("victimServices"); services != values.end()) {
    const auto where = "line " + std::to_string(services->second.second);
    for (auto word : detail::split_blank(services->second.first, true)) {
      try {
        config.victim_services.insert(checked_port(detail::parse_integer(word, where)));
      } catch (const Error& e) {
        throw Error(Errc::parse, e.code() == Errc::parse ? e.what() : where + ": " + e.what());
      }
    }
  }

  // Explicit addresses first, then the rest in ordinal order from the pool.
  std::sort(hosts.begin(), hosts.end(), [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
  for (const auto& h : hosts)
    if (h.ip)
      config.redirectors.push_back({h.ordinal, *h.ip, h.redirections});
  for (const auto& h : hosts) {
    if (h.ip)
      continue;
    try {
      config.redirectors.push_back({h.ordinal, allocate_next_ip(config), h.redirections});
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(h.line) + ": " + e.what());
    }
  }
  std::sort(config.redirectors.begin(), config.redirectors.end(),
            [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
  return config;
}

/// Canonical text form; `parse_lab_config` reads it back to an equal config
/// (hosts in ordinal order).
inline std::string render_lab_config(const LabConfig& config) {
  std::ostringstream out;
  auto kv = [&](const std::string& key, const std::string& value) {
    out << key << std::string(key.size() < 19 ? 19 - key.size() : 1, ' ') << "= \"" << value << "\"\n";
  };
  kv("bridgeName", config.bridge_name);
  kv("bridgeMAC", config.bridge_mac.to_string());
  kv("networkAddress", config.network.address().to_string());
  kv("netmask", config.network.netmask().to_string());
  for (auto role : all_roles)
    kv("tunTapName" + detail::role_suffix(role), config.slot(role).tap_name);
  for (auto role : all_roles)
    kv("macTap" + detail::role_suffix(role), config.slot(role).tap_mac.to_string());
  for (auto role : all_roles)
    kv("vmName" + detail::role_suffix(role), config.slot(role).vm_name);
  kv("snapshot", config.snapshot_name);
  kv("isolation", config.isolation.allows_outbound() ? "outbound" : "isolated");
  if (config.isolation.allows_outbound())
    kv("uplink", config.isolation.uplink());
  out << "victimServices     =";
  for (auto port : config.victim_services)
    out << ' ' << port;
  out << '\n';

  auto hosts = config.redirectors;
  std::sort(hosts.begin(), hosts.end(), [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
  for (const auto& h : hosts) {
    out << "\n[host " << h.ordinal << "]\nip = " << h.ip.to_string() << '\n';
    for (const auto& r : h.redirections)
      out << "redirect " << r.exposed_port << ' ' << r.victim_port << '\n';
  }
  return out.str();
}

} // namespace threatlab
