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

// Small end-to-end configuration shared by the trainer, experiment and
// acceptance tests. Trains in well under a second per run.

#pragma once

#include "mavqa/config.hpp"

namespace mavqa::testing {

inline RunConfig tiny_config() {
  RunConfig rc;
  rc.world.m = 4;
  rc.world.c = 4;
  rc.world.w = 2;
  rc.world.h = 2;
  rc.world.classes = 4;
  rc.world.cross_modal_rank = 2;
  rc.n_samples = 60;
  rc.model.slots = 6;
  rc.model.timesteps = 3;
  rc.model.eps_hidden = 16;
  rc.model.time_dim = 4;
  rc.model.qa_hidden = 8;
  rc.train.epochs = 2;
  rc.train.lr = 0.01;
  rc.seeds = {0, 1};
  rc.slot_axis = {4, 6};
  rc.timestep_axis = {2, 3};
  rc.ratio_axis = {0.0, 0.5, 1.0};
  return rc;
}

}  // namespace mavqa::testing
