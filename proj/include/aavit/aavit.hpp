#pragma once

// Umbrella header for the AAViT library.

#include "aavit/checkpoint.hpp"
#include "aavit/cli.hpp"
#include "aavit/data.hpp"
#include "aavit/errors.hpp"
#include "aavit/image.hpp"
#include "aavit/metrics.hpp"
#include "aavit/model.hpp"
#include "aavit/rng.hpp"
#include "aavit/synth.hpp"
#include "aavit/tensor.hpp"
#include "aavit/trainer.hpp"
