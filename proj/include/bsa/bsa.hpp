#pragma once

#include "bsa/errors.hpp"
#include "bsa/gmm.hpp"
#include "bsa/io.hpp"
#include "bsa/markov.hpp"
#include "bsa/policy_gradient.hpp"
#include "bsa/random.hpp"
#include "bsa/sa_core.hpp"
#include "bsa/theory.hpp"
