#pragma once

#include "ebm/analysis.hpp"
#include "ebm/boltzmann.hpp"
#include "ebm/core.hpp"
#include "ebm/data.hpp"
#include "ebm/denoise.hpp"
#include "ebm/io.hpp"
#include "ebm/model.hpp"
#include "ebm/pot.hpp"
#include "ebm/samplers.hpp"
#include "ebm/sigmoid_net.hpp"
#include "ebm/trainer.hpp"
