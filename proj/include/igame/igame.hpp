#pragma once

#include "expr.hpp"
#include "rewrite.hpp"
#include "rng.hpp"
#include "model.hpp"
#include "engine.hpp"
#include "epsilon.hpp"
#include "invariants.hpp"
#include "oracle.hpp"
#include "io.hpp"
