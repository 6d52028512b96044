#pragma once

// Convenience umbrella for the core pipeline. The review HTTP service lives in
// ecmf/review_service.hpp and is not pulled in here.
#include "ecmf/dataset.hpp"
#include "ecmf/ensemble.hpp"
#include "ecmf/error.hpp"
#include "ecmf/fusion_net.hpp"
#include "ecmf/label_refinement.hpp"
#include "ecmf/labels.hpp"
#include "ecmf/metrics.hpp"
#include "ecmf/preprocess.hpp"
#include "ecmf/run_manifest.hpp"
#include "ecmf/training.hpp"
