// SPDX-License-Identifier: Apache-2.0
//
// turbomimo — learned-MMSE channel estimation for 2D massive antenna arrays
// Copyright (C) 2026 turbomimo contributors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except
// in compliance with the License. You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under
// the License.

// Umbrella header: pulls in the whole library.

#pragma once

#include "turbomimo/channel.hpp"
#include "turbomimo/cli.hpp"
#include "turbomimo/complex_matrix.hpp"
#include "turbomimo/estimator.hpp"
#include "turbomimo/harness.hpp"
#include "turbomimo/learning.hpp"
#include "turbomimo/numerics.hpp"
#include "turbomimo/parallel.hpp"
#include "turbomimo/rng.hpp"
#include "turbomimo/turbo.hpp"
