#pragma once
// Umbrella header.
#include "projhead/data.hpp"
#include "projhead/evaluation.hpp"
#include "projhead/io.hpp"
#include "projhead/losses.hpp"
#include "projhead/models.hpp"
#include "projhead/reference.hpp"
#include "projhead/rng.hpp"
#include "projhead/theory.hpp"
#include "projhead/training.hpp"
#include "projhead/verify.hpp"
