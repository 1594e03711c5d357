// Umbrella header.
#pragma once

#include "hyhdr/alignment.hpp"
#include "hyhdr/attention.hpp"
#include "hyhdr/checkpoint.hpp"
#include "hyhdr/config.hpp"
#include "hyhdr/datagen.hpp"
#include "hyhdr/dataset.hpp"
#include "hyhdr/errors.hpp"
#include "hyhdr/fusion.hpp"
#include "hyhdr/grad_check.hpp"
#include "hyhdr/hdr.hpp"
#include "hyhdr/image_io.hpp"
#include "hyhdr/metrics.hpp"
#include "hyhdr/model.hpp"
#include "hyhdr/ops.hpp"
#include "hyhdr/optim.hpp"
#include "hyhdr/params.hpp"
#include "hyhdr/pipeline.hpp"
#include "hyhdr/rng.hpp"
#include "hyhdr/tape.hpp"
#include "hyhdr/tensor.hpp"
#include "hyhdr/train.hpp"
#include "hyhdr/window.hpp"
