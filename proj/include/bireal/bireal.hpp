#pragma once

#include "bireal/errors.hpp"
#include "bireal/tensor.hpp"
#include "bireal/conv.hpp"
#include "bireal/train_math.hpp"
#include "bireal/spec.hpp"
#include "bireal/layers.hpp"
#include "bireal/model.hpp"
#include "bireal/dataset.hpp"
#include "bireal/trainer.hpp"
#include "bireal/analysis.hpp"
#include "bireal/model_file.hpp"
#include "bireal/io.hpp"
