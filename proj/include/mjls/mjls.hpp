#pragma once

// Umbrella header: the full covariance-steering toolkit for Markov jump
// linear systems with multiplicative noise.

#include "mjls/chance.hpp"
#include "mjls/config_io.hpp"
#include "mjls/conic.hpp"
#include "mjls/controller.hpp"
#include "mjls/errors.hpp"
#include "mjls/ipm.hpp"
#include "mjls/linalg.hpp"
#include "mjls/model.hpp"
#include "mjls/moments.hpp"
#include "mjls/rng.hpp"
#include "mjls/sdp.hpp"
#include "mjls/simulate.hpp"
#include "mjls/steer.hpp"
