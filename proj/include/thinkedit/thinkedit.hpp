#pragma once

#include "rng.hpp"
#include "core.hpp"
#include "snapshot.hpp"
#include "env.hpp"
#include "vocab.hpp"
#include "flowgen.hpp"
#include "reason.hpp"
#include "rewards.hpp"
#include "grouping.hpp"
#include "optim.hpp"
#include "sampling.hpp"
#include "pretrain.hpp"
#include "trainer.hpp"
#include "harness.hpp"
