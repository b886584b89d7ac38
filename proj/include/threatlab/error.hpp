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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace threatlab {

/// Error categories raised by the library. Validation violations are not
/// errors; they are returned as data by `validate_config`.
enum class Errc {
  parse,             // malformed text (addresses, config, plan lines)
  mask_format,       // non-contiguous netmask
  alignment,         // host bits set in a network address
  network_too_small, // fewer than four usable hosts
  capacity,          // address pool or ordinal space exhausted
  conflict,          // artifact already allocated or defined
  target,            // redirection target is not the victim
  missing,           // referenced artifact does not exist
  contract,          // caller broke a documented precondition
  configuration,     // system not configured for the request
  domain,            // arithmetic domain error
  load,              // persisted state unreadable
  usage,             // command-line misuse
  io,
};

inline const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::parse: return "parse";
    case Errc::mask_format: return "mask-format";
    case Errc::alignment: return "alignment";
    case Errc::network_too_small: return "network-too-small";
    case Errc::capacity: return "capacity";
    case Errc::conflict: return "conflict";
    case Errc::target: return "target";
    case Errc::missing: return "missing";
    case Errc::contract: return "contract";
    case Errc::configuration: return "configuration";
    case Errc::domain: return "domain";
    case Errc::load: return "load";
    case Errc::usage: return "usage";
    case Errc::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

/// Raised by plan application; carries the index of the failing op.
class ApplyError : public Error {
public:
  ApplyError(Errc code, std::size_t op_index, const std::string& what)
      : Error(code, "op " + std::to_string(op_index) + ": " + what),
        op_index_(op_index) {}

  std::size_t op_index() const noexcept { return op_index_; }

private:
  std::size_t op_index_;
};

} // namespace threatlab
