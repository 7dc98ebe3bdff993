#pragma once

// Umbrella header.
#include "bessel.hpp"
#include "clustering.hpp"
#include "config.hpp"
#include "discovery.hpp"
#include "encoder.hpp"
#include "errors.hpp"
#include "label_io.hpp"
#include "matching.hpp"
#include "objectives.hpp"
#include "proxies.hpp"
#include "random.hpp"
#include "spectral.hpp"
#include "sphere.hpp"
#include "synth.hpp"
#include "vmf.hpp"
