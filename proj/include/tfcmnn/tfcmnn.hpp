#pragma once

#include "tfcmnn/audio_io.hpp"
#include "tfcmnn/checkpoint.hpp"
#include "tfcmnn/constraints.hpp"
#include "tfcmnn/data.hpp"
#include "tfcmnn/features.hpp"
#include "tfcmnn/gradcheck.hpp"
#include "tfcmnn/layers.hpp"
#include "tfcmnn/model.hpp"
#include "tfcmnn/numerics.hpp"
#include "tfcmnn/report.hpp"
#include "tfcmnn/structure.hpp"
#include "tfcmnn/training.hpp"
