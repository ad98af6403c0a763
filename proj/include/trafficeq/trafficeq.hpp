#pragma once

#include "bpr.hpp"
#include "costs.hpp"
#include "format.hpp"
#include "fw.hpp"
#include "network.hpp"
#include "oracle.hpp"
#include "sd_mirror.hpp"
#include "sd_smooth.hpp"
#include "spath.hpp"
