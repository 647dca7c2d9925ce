#pragma once

#include "bifseg/error.hpp"
#include "bifseg/tensor.hpp"
#include "bifseg/kernels.hpp"
#include "bifseg/autodiff.hpp"
#include "bifseg/loss.hpp"
#include "bifseg/metrics.hpp"
#include "bifseg/rng.hpp"
#include "bifseg/blocks.hpp"
#include "bifseg/formats.hpp"
#include "bifseg/data.hpp"
#include "bifseg/trainer.hpp"
#include "bifseg/config.hpp"
#include "bifseg/gradcheck_suite.hpp"
