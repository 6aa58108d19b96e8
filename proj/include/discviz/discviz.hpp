// Copyright 2026 The discviz Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "discviz/analysis.hpp"
#include "discviz/error.hpp"
#include "discviz/exports.hpp"
#include "discviz/importance.hpp"
#include "discviz/io.hpp"
#include "discviz/knowledge.hpp"
#include "discviz/mixture.hpp"
#include "discviz/numutil.hpp"
#include "discviz/region_embed.hpp"
#include "discviz/sample_embed.hpp"
#include "discviz/synth.hpp"
#include "discviz/vmf.hpp"
