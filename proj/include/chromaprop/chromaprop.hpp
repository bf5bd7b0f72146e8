#pragma once

#include "chromaprop/backbone.hpp"
#include "chromaprop/checkpoint.hpp"
#include "chromaprop/colorspace.hpp"
#include "chromaprop/config.hpp"
#include "chromaprop/flowfield.hpp"
#include "chromaprop/fusion.hpp"
#include "chromaprop/image_io.hpp"
#include "chromaprop/metrics.hpp"
#include "chromaprop/nn.hpp"
#include "chromaprop/pipeline.hpp"
#include "chromaprop/propagation.hpp"
#include "chromaprop/report.hpp"
#include "chromaprop/srl.hpp"
#include "chromaprop/synthetic.hpp"
#include "chromaprop/tensor.hpp"
