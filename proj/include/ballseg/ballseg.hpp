#pragma once

// Ball-detection-as-segmentation toolkit: a small multi-scale FCN trained on
// consecutive-image pairs, greedy top-k heatmap detection, test-time
// augmentation by heatmap averaging, and arena-disjoint K-fold evaluation.

#include "ballseg/data.hpp"
#include "ballseg/detection.hpp"
#include "ballseg/eval.hpp"
#include "ballseg/image_io.hpp"
#include "ballseg/model.hpp"
#include "ballseg/ops.hpp"
#include "ballseg/parallel.hpp"
#include "ballseg/rng.hpp"
#include "ballseg/svg.hpp"
#include "ballseg/tensor.hpp"
#include "ballseg/training.hpp"
