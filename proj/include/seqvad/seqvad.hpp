#pragma once

#include "seqvad/calibration.hpp"
#include "seqvad/data_model.hpp"
#include "seqvad/detector.hpp"
#include "seqvad/error.hpp"
#include "seqvad/knn.hpp"
#include "seqvad/metrics.hpp"
#include "seqvad/model.hpp"
#include "seqvad/regressor.hpp"
#include "seqvad/rnn.hpp"
#include "seqvad/synth.hpp"
