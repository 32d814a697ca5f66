#pragma once

#include "groundbox/attention.hpp"
#include "groundbox/checkpoint.hpp"
#include "groundbox/config.hpp"
#include "groundbox/data.hpp"
#include "groundbox/dataset_io.hpp"
#include "groundbox/encoders.hpp"
#include "groundbox/errors.hpp"
#include "groundbox/eval.hpp"
#include "groundbox/gradcheck.hpp"
#include "groundbox/grounding.hpp"
#include "groundbox/model.hpp"
#include "groundbox/optim.hpp"
#include "groundbox/tensor.hpp"
#include "groundbox/train.hpp"
