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

#include "threatlab/config_file.hpp"
#include "threatlab/error.hpp"
#include "threatlab/ipcalc.hpp"
#include "threatlab/lab.hpp"
#include "threatlab/model.hpp"
#include "threatlab/pcap.hpp"
#include "threatlab/plan.hpp"
#include "threatlab/planner.hpp"
#include "threatlab/services.hpp"
#include "threatlab/shell.hpp"
#include "threatlab/sim.hpp"
