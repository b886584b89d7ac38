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
#include <cstdint>
#include <string_view>
#include <utility>

namespace threatlab {

// Well-known TCP service names, as listed in the nmap-services table.
inline constexpr std::array<std::pair<std::uint16_t, std::string_view>, 64> tcp_services = {{
    {7, "echo"},          {9, "discard"},       {11, "systat"},        {13, "daytime"},
    {19, "chargen"},      {20, "ftp-data"},     {21, "ftp"},           {22, "ssh"},
    {23, "telnet"},       {25, "smtp"},         {33, "dsp"},           {37, "time"},
    {44, "mpm-flags"},    {53, "domain"},       {55, "isi-gl"},        {66, "sqlnet"},
    {70, "gopher"},       {77, "priv-rje"},     {79, "finger"},        {80, "http"},
    {88, "kerberos-sec"}, {99, "metagram"},     {100, "newacct"},      {106, "pop3pw"},
    {110, "pop3"},        {111, "rpcbind"},     {113, "ident"},        {119, "nntp"},
    {120, "cfdptkt"},     {130, "cisco-fna"},   {135, "msrpc"},        {139, "netbios-ssn"},
    {140, "emfis-data"},  {143, "imap"},        {150, "sql-net"},      {160, "sgmp-traps"},
    {170, "print-srv"},   {179, "bgp"},         {180, "ris"},          {389, "ldap"},
    {443, "https"},       {445, "microsoft-ds"},{512, "exec"},         {513, "login"},
    {514, "shell"},       {587, "submission"},  {993, "imaps"},        {995, "pop3s"},
    {1099, "rmiregistry"},{1433, "ms-sql-s"},   {1524, "ingreslock"},  {2049, "nfs"},
    {2121, "ccproxy-ftp"},{3306, "mysql"},      {3389, "ms-wbt-server"},{3632, "distccd"},
    {5432, "postgresql"}, {5900, "vnc"},        {6000, "X11"},         {6667, "irc"},
    {8000, "http-alt"},   {8009, "ajp13"},      {8080, "http-proxy"},  {8443, "https-alt"},
}};

inline std::string_view service_name(std::uint16_t port) noexcept {
  auto it = std::lower_bound(tcp_services.begin(), tcp_services.end(), port,
                             [](const auto& entry, std::uint16_t p) { return entry.first < p; });
  if (it != tcp_services.end() && it->first == port)
    return it->second;
  return "unknown";
}

} // namespace threatlab
