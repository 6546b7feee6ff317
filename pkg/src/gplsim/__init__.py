"""Profile estimation and block empirical likelihood for longitudinal GPLSIMs."""
