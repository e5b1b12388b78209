#pragma once

#include "lr/attention.hpp"
#include "lr/backend.hpp"
#include "lr/codec.hpp"
#include "lr/config.hpp"
#include "lr/errors.hpp"
#include "lr/evalkit.hpp"
#include "lr/external_backend.hpp"
#include "lr/image.hpp"
#include "lr/log.hpp"
#include "lr/maskops.hpp"
#include "lr/numeric.hpp"
#include "lr/pipeline.hpp"
#include "lr/plugins.hpp"
#include "lr/rng.hpp"
#include "lr/sampler.hpp"
#include "lr/tensor.hpp"
#include "lr/text.hpp"
#include "lr/toy_backend.hpp"
