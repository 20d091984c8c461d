//---------------------------------------------------------------------------//
//! \file rtegrad.hpp
//! Umbrella header.
//---------------------------------------------------------------------------//
#pragma once

#include "core.hpp"
#include "rng.hpp"
#include "parallel.hpp"
#include "objectives.hpp"
#include "forward_mc.hpp"
#include "grad_otd.hpp"
#include "grad_dto.hpp"
#include "fvm.hpp"
#include "config.hpp"
#include "harness.hpp"
