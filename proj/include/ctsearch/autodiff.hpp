#pragma once

#include "ctsearch/ad/checkpoint.hpp"
#include "ctsearch/ad/gradcheck.hpp"
#include "ctsearch/ad/init.hpp"
#include "ctsearch/ad/ops.hpp"
#include "ctsearch/ad/optim.hpp"
#include "ctsearch/ad/tape.hpp"
#include "ctsearch/ad/tensor.hpp"
