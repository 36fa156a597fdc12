#pragma once

// Umbrella header: the whole library.

#include <prrn/autodiff.hpp>
#include <prrn/data.hpp>
#include <prrn/errors.hpp>
#include <prrn/eval.hpp>
#include <prrn/losses.hpp>
#include <prrn/mat.hpp>
#include <prrn/model.hpp>
#include <prrn/rigidity.hpp>
#include <prrn/rng.hpp>
#include <prrn/trainer.hpp>
#include <prrn/types.hpp>
#include <prrn/version.hpp>
