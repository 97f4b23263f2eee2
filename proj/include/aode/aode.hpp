#pragma once

#include "aode/activation.hpp"
#include "aode/adjoint.hpp"
#include "aode/architecture.hpp"
#include "aode/checkpoint.hpp"
#include "aode/control.hpp"
#include "aode/data_io.hpp"
#include "aode/diagnostics.hpp"
#include "aode/dynamics.hpp"
#include "aode/errors.hpp"
#include "aode/parallel.hpp"
#include "aode/random.hpp"
#include "aode/trainer.hpp"
