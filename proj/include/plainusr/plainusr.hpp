#pragma once

// Everything in one include.

#include "plainusr/bench.hpp"
#include "plainusr/checkpoint.hpp"
#include "plainusr/error.hpp"
#include "plainusr/init.hpp"
#include "plainusr/lia.hpp"
#include "plainusr/model.hpp"
#include "plainusr/ops.hpp"
#include "plainusr/parallel.hpp"
#include "plainusr/profile.hpp"
#include "plainusr/quality.hpp"
#include "plainusr/reparam.hpp"
#include "plainusr/tensor.hpp"
