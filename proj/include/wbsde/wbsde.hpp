#pragma once

#include "errors.hpp"
#include "lattice.hpp"
#include "gexpect.hpp"
#include "rbsde.hpp"
#include "lossmap.hpp"
#include "weakvalue.hpp"
#include "decomp.hpp"
#include "game.hpp"
#include "market.hpp"
#include "simulate.hpp"
#include "config.hpp"
#include "report_io.hpp"
#include "verification.hpp"
#include "cli.hpp"
