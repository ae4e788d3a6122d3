#pragma once

#include "vyang/tensor.hpp"
#include "vyang/random.hpp"
#include "vyang/vtf.hpp"
#include "vyang/wav.hpp"
#include "vyang/autograd.hpp"
#include "vyang/ops.hpp"
#include "vyang/nn.hpp"
#include "vyang/attention.hpp"
#include "vyang/sample.hpp"
#include "vyang/features.hpp"
#include "vyang/glossary.hpp"
#include "vyang/visual.hpp"
#include "vyang/acoustic.hpp"
#include "vyang/fusion.hpp"
#include "vyang/model.hpp"
#include "vyang/metrics.hpp"
#include "vyang/train.hpp"
#include "vyang/checkpoint.hpp"
#include "vyang/dataset.hpp"
#include "vyang/splits.hpp"
#include "vyang/synthetic.hpp"
#include "vyang/experiment.hpp"
