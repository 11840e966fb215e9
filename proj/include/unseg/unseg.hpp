#pragma once

#include "unseg/baselines.hpp"
#include "unseg/error.hpp"
#include "unseg/eval.hpp"
#include "unseg/gradcheck.hpp"
#include "unseg/hyperparams.hpp"
#include "unseg/labels.hpp"
#include "unseg/losses.hpp"
#include "unseg/pipeline.hpp"
#include "unseg/segnet.hpp"
#include "unseg/synthetic.hpp"
#include "unseg/tensor.hpp"
