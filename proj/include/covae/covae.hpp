#pragma once

#include "covae/checkpoint.hpp"
#include "covae/dataset_io.hpp"
#include "covae/diff/adam.hpp"
#include "covae/diff/tensor.hpp"
#include "covae/harness.hpp"
#include "covae/metrics.hpp"
#include "covae/model.hpp"
#include "covae/ordering.hpp"
#include "covae/report.hpp"
#include "covae/rng.hpp"
#include "covae/scm.hpp"
#include "covae/stein.hpp"
#include "covae/train.hpp"
