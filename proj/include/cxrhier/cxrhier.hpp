#pragma once

#include "cxrhier/error.hpp"
#include "cxrhier/hierarchy.hpp"
#include "cxrhier/records.hpp"
#include "cxrhier/metrics.hpp"
#include "cxrhier/folds.hpp"
#include "cxrhier/erroranalysis.hpp"
#include "cxrhier/iov.hpp"
#include "cxrhier/random.hpp"
#include "cxrhier/synth.hpp"
#include "cxrhier/io.hpp"
