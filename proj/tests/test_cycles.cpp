#include "omt/cycles.hpp"
