// Copyright 2026 The mavqa Authors. All Rights Reserved.
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

#include "mavqa/binary_io.hpp"
#include "mavqa/checkpoint.hpp"
#include "mavqa/config.hpp"
#include "mavqa/core.hpp"
#include "mavqa/diffusion.hpp"
#include "mavqa/experiment.hpp"
#include "mavqa/params.hpp"
#include "mavqa/qa_head.hpp"
#include "mavqa/rmm.hpp"
#include "mavqa/trainer.hpp"
#include "mavqa/world.hpp"
