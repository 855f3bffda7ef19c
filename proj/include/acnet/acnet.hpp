#pragma once

#include "acnet/anchors.hpp"
#include "acnet/backbone.hpp"
#include "acnet/box.hpp"
#include "acnet/checkpoint.hpp"
#include "acnet/config.hpp"
#include "acnet/dataset_io.hpp"
#include "acnet/dce.hpp"
#include "acnet/error.hpp"
#include "acnet/grad_check.hpp"
#include "acnet/gradcheck_suite.hpp"
#include "acnet/head.hpp"
#include "acnet/mama.hpp"
#include "acnet/model.hpp"
#include "acnet/nn.hpp"
#include "acnet/ops.hpp"
#include "acnet/postprocess.hpp"
#include "acnet/synth.hpp"
#include "acnet/tensor.hpp"
#include "acnet/train.hpp"
