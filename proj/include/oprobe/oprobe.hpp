// Copyright 2026 The oprobe Authors. All Rights Reserved.
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

#include "oprobe/config.hpp"
#include "oprobe/dataio.hpp"
#include "oprobe/error.hpp"
#include "oprobe/numerics.hpp"
#include "oprobe/probe.hpp"
#include "oprobe/profiling.hpp"
#include "oprobe/sae.hpp"
#include "oprobe/sweep.hpp"
#include "oprobe/synthetic.hpp"
#include "oprobe/taxonomy.hpp"
