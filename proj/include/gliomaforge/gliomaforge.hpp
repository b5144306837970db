#pragma once

#include "gliomaforge/checkpoint.hpp"
#include "gliomaforge/conv.hpp"
#include "gliomaforge/error.hpp"
#include "gliomaforge/gradcheck.hpp"
#include "gliomaforge/harmonize.hpp"
#include "gliomaforge/loss.hpp"
#include "gliomaforge/metrics.hpp"
#include "gliomaforge/model.hpp"
#include "gliomaforge/pipeline.hpp"
#include "gliomaforge/radiomics.hpp"
#include "gliomaforge/random.hpp"
#include "gliomaforge/selftest.hpp"
#include "gliomaforge/stratify.hpp"
#include "gliomaforge/synthetic.hpp"
#include "gliomaforge/tensor.hpp"
#include "gliomaforge/train.hpp"
#include "gliomaforge/util.hpp"
#include "gliomaforge/volume_io.hpp"
