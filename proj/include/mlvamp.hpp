#pragma once

#include "mlvamp/admm.hpp"
#include "mlvamp/baseline.hpp"
#include "mlvamp/chain.hpp"
#include "mlvamp/common.hpp"
#include "mlvamp/denoise.hpp"
#include "mlvamp/harness.hpp"
#include "mlvamp/message_passing.hpp"
#include "mlvamp/model.hpp"
#include "mlvamp/model_io.hpp"
#include "mlvamp/random.hpp"
#include "mlvamp/state_evolution.hpp"
