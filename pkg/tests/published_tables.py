"""Published per-project figures used as fixtures.

``CREDIT_ROWS``: country, project, observed ha, ex-ante baseline ha, SC ha,
ex-ante credits, proportional offsets, significant, avoided ha, SC offsets.

``VALIDATION_ROWS``: project, final validation year, project ha, SC ha,
polygon area ha, reported % of area, reported failure. Sub-sites of
multi-site projects carry the parent polygon area.
"""

from __future__ import annotations

from redd_eval.crediting import CreditInputs

CREDIT_ROWS = [
    ("Peru", "1882", 403, 1268, 702, 356_960, 197_623, True, 299, 84_057),
    ("Peru", "2278", 878, 13299, 873, 5_891_253, 386_726, False, 0, 0),
    ("Peru", "1067", 4070, 13581, 8797, 4_817_471, 3_120_484, True, 4727, 1_676_658),
    ("Peru", "958", 3391, 2924, 4653, 630_937, 1_004_018, True, 1262, 272_313),
    ("Peru", "944", 5454, 23685, 8783, 5_151_165, 1_910_183, True, 3329, 724_012),
    ("Peru", "844", 699, 125541, 410, 12_475_134, 40_742, False, 0, 0),
    ("Colombia", "1400", 334, 4450, 264, 1_657_098, 98_299, False, 0, 0),
    ("Colombia", "1566", 22_473, 103_908, 21_228, 31_325_923, 6_399_752, False, 0, 0),
    ("Colombia", "1396", 693, 8076, 6219, 1_489_786, 1_147_190, True, 5526, 1_019_305),
    ("Colombia", "1395", 1129, 16_835, 1253, 2_791_723, 207_787, False, 124, 20_616),
    ("Colombia", "1392", 105, 10_722, 118, 1_455_141, 16_014, False, 0, 0),
    ("Cambodia", "904", 12_950, 21_252, 10_632, 1_626_420, 813_669, False, 0, 0),
    ("Cambodia", "1650", 11_499, 30_446, 15_609, 12_432_277, 6_373_757, True, 4110, 1_678_272),
    ("DRC", "1359", 16_385, 11_949, 8_204, 4_735_361, 3_251_226, False, 0, 0),
    ("Tanzania", "1325", 11_318, 10_578, 8_077, 359_834, 274_757, False, 0, 0),
    ("Tanzania", "1900", 16, 11_407, 14, 348_019, 427, False, 0, 0),
    ("Tanzania", "1897", 14161, 35_472, 13_577, 1_406_892, 538_492, False, 0, 0),
]
CREDIT_TOTALS = {"exante": 88_951_394, "proportional": 25_781_146, "sc_offsets": 5_475_233}


def credit_inputs(rows=CREDIT_ROWS, reported: bool = True) -> list[CreditInputs]:
    out = []
    for country, pid, obs, base, sc, exante, prop, sig, avoided, offsets in rows:
        out.append(CreditInputs(
            project=pid, exante_credits=float(exante), baseline_defor=float(base), observed_defor=float(obs),
            sc_defor=float(sc), significant=sig, country=country,
            reported_proportional=float(prop) if reported else None,
            reported_avoided_ha=float(avoided) if reported else None,
            reported_sc_offsets=float(offsets) if reported else None,
        ))
    return out


VALIDATION_ROWS = [
    ("1650", 2010, 2389.8, 2142.0, 193_503, 0.1, False),
    ("1748", 2015, 3089.9, 2700.8, 458_408, 0.1, False),
    ("904", 2007, 1122.3, 1032.2, 66_205, 0.1, False),
    ("1389", 2013, 929.9, 927.2, 68_602, 0.0, False),
    ("1390", 2014, 365.1, 565.6, 131_828, -0.2, False),
    ("1391", 2013, 55.2, 190.9, 55_104, -0.2, False),
    ("1392", 2013, 132.0, 89.0, 60_316, 0.1, False),
    ("1395", 2013, 554.8, 890.7, 91_831, -0.4, False),
    ("1396", 2014, 643.3, 659.2, 57_051, 0.0, False),
    ("1400", 2013, 89.7, 268.5, 63_961, -0.3, False),
    ("1566", 2013, 10_761.7, 9563.2, 1_753_035, 0.1, False),
    ("856", 2011, 88.6, 147.9, 12_710, -0.5, False),
    ("1359", 2008, 1509.9, 1572.4, 188_489, 0.0, False),
    ("934", 2010, 8234.9, 7975.1, 301_263, 0.1, False),
    ("1067", 2011, 1953.1, 1687.8, 557_250, 0.0, False),
    ("1182", 2013, 243.6, 252.3, 53_357, 0.0, False),
    ("1360-1", 2010, 381.2, 364.8, 127_098, 0.0, False),
    ("1360-2", 2010, 34.7, 31.6, 127_098, 0.0, False),
    ("1360-3", 2010, 73.2, 73.8, 127_098, 0.0, False),
    ("2278", 2018, 995.8, 718.3, 183_120, 0.2, False),
    ("844", 2009, 50.8, 60.5, 97_998, 0.0, False),
    ("944", 2009, 2626.6, 2843.2, 177_533, -0.1, False),
    ("958", 2011, 1504.6, 1749.0, 295_412, -0.1, False),
    ("985", 2009, 2914.3, 2224.3, 1_352_298, 0.1, False),
    ("1325", 2011, 2913.9, 3456.2, 65_279, -0.8, True),
    ("1897", 2017, 4279.0, 7701.1, 204_203, -1.7, True),
    ("1900", 2016, 16.3, 7.1, 107_152, 0.0, False),
    ("1202", 2009, 193.5, 37.7, 40_103, 0.4, False),
    ("1775-1", 2015, 1526.2, 779.7, 943_674, 0.1, False),
    ("1775-2", 2015, 136.5, 406.9, 943_674, -0.2, False),
    ("1775-3", 2015, 197.2, 157.8, 943_674, 0.0, False),
]
