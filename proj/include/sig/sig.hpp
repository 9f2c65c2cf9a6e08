#pragma once

#include "sig/tensor.hpp"
#include "sig/autodiff.hpp"
#include "sig/gradcheck.hpp"
#include "sig/params.hpp"
#include "sig/optim.hpp"
#include "sig/checkpoint.hpp"
#include "sig/graph_store.hpp"
#include "sig/extractors.hpp"
#include "sig/confounders.hpp"
#include "sig/model.hpp"
#include "sig/metrics.hpp"
#include "sig/synth.hpp"
#include "sig/trainer.hpp"
#include "sig/explain.hpp"
#include "sig/config.hpp"
#include "sig/diagnostics.hpp"
