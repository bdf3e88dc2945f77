#pragma once

#include "bbm/barrier.hpp"
#include "bbm/error.hpp"
#include "bbm/hypergradient.hpp"
#include "bbm/linalg.hpp"
#include "bbm/lower_solver.hpp"
#include "bbm/outer_solver.hpp"
#include "bbm/path_following.hpp"
#include "bbm/problem.hpp"
#include "bbm/projection.hpp"
#include "bbm/testbed.hpp"
