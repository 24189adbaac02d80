#pragma once

#include "gld/config.hpp"
#include "gld/errors.hpp"
#include "gld/gld_model.hpp"
#include "gld/hdg.hpp"
#include "gld/linalg.hpp"
#include "gld/mesh.hpp"
#include "gld/output.hpp"
#include "gld/polybasis.hpp"
#include "gld/scenario.hpp"
#include "gld/signal.hpp"
#include "gld/time_stepper.hpp"
#include "gld/verification.hpp"
