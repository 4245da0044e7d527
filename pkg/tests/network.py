import json
import math

from linepack import *
from linepack import DEMAND
from linepack import PSI
from linepack import SLACK

from .base import BaseTestCase
from .base import data_path
from .base import load_network


def tiny_network(**overrides):
    data = {
        'name': 'tiny',
        'nodes': [
            {'id': 'a', 'kind': 'slack', 'rho_min': .5, 'rho_max': 1.5},
            {'id': 'b', 'rho_min': .5, 'rho_max': 1.5},
            {'id': 'c', 'rho_min': .5, 'rho_max': 1.5}],
        'pipes': [
            {'id': 'ab', 'from': 'a', 'to': 'b', 'length_km': 25,
             'diameter_m': .5, 'friction': .01},
            {'id': 'bc', 'from': 'b', 'to': 'c', 'length_km': 10,
             'diameter_m': .5, 'friction': .01}],
        'compressors': [
            {'id': 'k', 'edge': 'bc', 'orientation': '-', 'alpha_max': 1.4}],
    }
    data.update(overrides)
    return data


class TestGasConstants(BaseTestCase):
    def test_defaults(self):
        c = GasConstants()
        self.assertEqual(c.sound_speed, 377.968)
        self.assertEqual(c.nominal_length, 1e4)
        self.assertAlmostEqual(c.nominal_density,
                               500. * PSI / 377.968 ** 2)
        self.assertAlmostEqual(c.time_scale, 1e4 / 377.968)
        self.assertAlmostEqual(c.flux_scale, 377.968 * c.nominal_density)

    def test_nominal_pressure(self):
        c = GasConstants.from_dict({'sound_speed_mps': 377.968,
                                    'nominal_pressure_psi': 500})
        self.assertAlmostEqual(pressure_to_density(500., c), 1., places=12)
        self.assertAlmostEqual(density_to_pressure(1.6, c), 800., places=9)

    def test_validation(self):
        with self.assertRaisesCtx(ValidationError):
            GasConstants(sound_speed=-1.)
        with self.assertRaisesCtx(ValidationError):
            GasConstants(m_exp=.5)
        with self.assertRaisesCtx(ValidationError):
            GasConstants.from_dict({'speed_of_light': 3e8})
        with self.assertRaisesCtx(ValidationError):
            GasConstants.from_dict({'sound_speed_mps': 'fast'})

    def test_scaling(self):
        c = GasConstants()
        seconds = 86400.
        t = nondimensionalize(seconds, 'time', c)
        self.assertAlmostEqual(t, 86400. * 377.968 / 1e4)
        self.assertAlmostEqual(redimensionalize(t, 'time', c), seconds,
                               places=8)
        values = nondimensionalize([1., 2.], 'density', c)
        self.assertEqual(values.shape, (2,))
        with self.assertRaisesCtx(DomainError):
            nondimensionalize(1., 'temperature', c)


class TestGasNetwork(BaseTestCase):
    def test_chain(self):
        net = load_network('chain5.json')
        self.assertEqual(net.name, 'chain5')
        self.assertEqual([n.id for n in net.nodes],
                         ['n1', 'n2', 'n3', 'n4', 'n5'])
        self.assertEqual([n.id for n in net.slack_nodes], ['n1'])
        self.assertEqual(len(net.pipes), 4)
        self.assertEqual(net.total_length_km, 40.)

        node = net.node('n3')
        self.assertAlmostEqual(node.rho_min, 1., places=12)
        self.assertAlmostEqual(node.rho_max, 1.6, places=12)

        pipe = net.pipe('p2')
        self.assertEqual((pipe.from_node, pipe.to_node), ('n2', 'n3'))
        self.assertAlmostEqual(pipe.length, 1.)
        self.assertAlmostEqual(pipe.resistance, 1e4 * .01 / .9144)

        c1, = net.compressors
        self.assertEqual((c1.edge, c1.orientation, c1.alpha_max),
                         ('p1', '+', 1.6))
        self.assertEqual(c1.location(net.pipe('p1')), 'n1')

    def test_tree25(self):
        net = load_network('tree25.json')
        self.assertEqual(len(net.nodes), 25)
        self.assertEqual(len(net.pipes), 24)
        self.assertEqual(len(net.compressors), 5)
        self.assertAlmostEqual(net.total_length_km, 477., places=9)
        for node in net.nodes:
            self.assertAlmostEqual(
                density_to_pressure(node.rho_min, net.constants), 500.)
            self.assertAlmostEqual(
                density_to_pressure(node.rho_max, net.constants), 800.)

    def test_round_trip(self):
        net = GasNetwork.from_dict(tiny_network())
        again = GasNetwork.from_dict(json.loads(json.dumps(net.to_dict())))
        self.assertEqual(again.to_dict(), net.to_dict())
        self.assertEqual(again.compressors[0].orientation, '-')

    def test_orientation_alias(self):
        data = tiny_network()
        data['compressors'][0]['orientation'] = '−'
        net = GasNetwork.from_dict(data)
        self.assertEqual(net.compressors[0].orientation, '-')
        self.assertEqual(net.compressors[0].location(net.pipe('bc')), 'c')

    def test_graph(self):
        graph = GasNetwork.from_dict(tiny_network()).graph()
        self.assertEqual(sorted(graph.nodes), ['a', 'b', 'c'])
        self.assertEqual(graph.edges['a', 'b']['id'], 'ab')
        self.assertEqual(graph.nodes['a']['kind'], SLACK)

    def assertInvalid(self, data, fragment):
        try:
            GasNetwork.from_dict(data)
        except ValidationError as exc:
            self.assertTrue(fragment in str(exc),
                            '%r not in %r' % (fragment, str(exc)))
        else:
            raise AssertionError('No exception was raised.')

    def test_validation(self):
        data = tiny_network()
        data['nodes'].append({'id': 'b', 'rho_min': .5, 'rho_max': 1.})
        self.assertInvalid(data, 'duplicate node id "b"')

        data = tiny_network()
        data['pipes'][1]['to'] = 'z'
        self.assertInvalid(data, 'unknown node "z"')

        data = tiny_network()
        data['nodes'][0]['kind'] = 'demand'
        self.assertInvalid(data, 'at least one slack node')

        data = tiny_network()
        data['nodes'].append({'id': 'd', 'rho_min': .5, 'rho_max': 1.})
        self.assertInvalid(data, 'not connected')

        data = tiny_network()
        data['pipes'].append({'id': 'ba', 'from': 'b', 'to': 'a',
                              'length_km': 1, 'diameter_m': .5,
                              'friction': .01})
        self.assertInvalid(data, 'at most one edge')

        data = tiny_network()
        data['compressors'][0]['edge'] = 'zz'
        self.assertInvalid(data, 'unknown edge "zz"')

        data = tiny_network()
        data['compressors'].append({'id': 'k2', 'edge': 'bc',
                                    'orientation': '-'})
        self.assertInvalid(data, 'already has a compressor')

        data = tiny_network()
        data['nodes'][1]['rho_max'] = .4
        self.assertInvalid(data, 'nodes[1]')

        data = tiny_network()
        data['pipes'][0]['length_km'] = 0
        self.assertInvalid(data, 'pipes[0]')

        data = tiny_network()
        del data['pipes'][0]['diameter_m']
        self.assertInvalid(data, 'missing field "diameter_m"')

        data = tiny_network()
        data['compressors'][0]['alpha_max'] = .9
        self.assertInvalid(data, 'alpha_max must be >= 1')

    def test_from_file_errors(self):
        with self.assertRaisesCtx(ValidationError):
            GasNetwork.from_file(data_path('chain5_etc.json'))


class TestRefine(BaseTestCase):
    def test_no_split(self):
        net = load_network('chain5.json')
        refined = refine(net, 1e4)
        self.assertEqual(refined.counts,
                         {'V': 5, 'E': 4, 'M': 4, 'b': 1, 'C': 1})
        self.assertEqual(refined.demand_ids, ['n2', 'n3', 'n4', 'n5'])
        self.assertEqual(refined.slack_ids, ['n1'])
        self.assertEqual(refined.compressors[0].edge, 'p1')

    def test_split(self):
        net = load_network('chain5.json')
        refined = refine(net, 5000.)
        self.assertEqual(refined.counts,
                         {'V': 9, 'E': 8, 'M': 8, 'b': 1, 'C': 1})
        self.assertEqual([p.id for p in refined.pipes[:2]],
                         ['p1.1', 'p1.2'])
        self.assertEqual(refined.pipes[0].parent, 'p1')
        self.assertEqual(refined.compressors[0].edge, 'p1.1')
        mid = refined.node('p1.1')
        self.assertEqual(mid.kind, DEMAND)
        self.assertEqual(mid.parent, 'p1')
        self.assertAlmostEqual(mid.rho_min, net.node('n2').rho_min)
        self.assertAlmostEqual(math.fsum(refined.lengths), 4.)
        self.assertTrue(abs(refined.total_length_km - 40.) <= 40. * 1e-12)
        self.assertEqual(refined.summary(), 'V=9 E=8 M=8 b=1 C=1')

    def test_orientation_follows_segment(self):
        net = GasNetwork.from_dict(tiny_network())
        refined = refine(net, 5000.)
        self.assertEqual([p.id for p in refined.pipes],
                         ['ab.1', 'ab.2', 'ab.3', 'ab.4', 'ab.5',
                          'bc.1', 'bc.2'])
        # "-" compressors weight the last segment's downstream end.
        self.assertEqual(refined.compressors[0].edge, 'bc.2')
        self.assertEqual(refined.nodes[refined.compressor_nodes[0]].id, 'c')

    def test_uneven_split(self):
        net = GasNetwork.from_dict(tiny_network())
        refined = refine(net, 10000.)
        ab = [p for p in refined.pipes if p.parent == 'ab']
        self.assertEqual(len(ab), 3)
        for pipe in ab:
            self.assertAlmostEqual(pipe.length_km, 25. / 3)

    def test_tree25_counts(self):
        refined = refine(load_network('tree25.json'), 1e4)
        self.assertEqual(refined.counts,
                         {'V': 62, 'E': 61, 'M': 61, 'b': 1, 'C': 5})
        self.assertAlmostEqual(refined.total_length_km, 477., places=9)

    def test_bad_segment(self):
        with self.assertRaisesCtx(DomainError):
            refine(load_network('chain5.json'), 0.)


class TestMatrices(BaseTestCase):
    def test_incidence(self):
        refined = refine(load_network('chain5.json'), 1e4)
        mats = assemble_matrices(refined)
        A = mats.A.toarray()
        self.assertEqual(A.shape, (5, 4))
        # p1 leaves n1 and enters n2.
        self.assertEqual(A[0, 0], -1.)
        self.assertEqual(A[1, 0], 1.)
        self.assertEqual(list(A.sum(axis=0)), [0.] * 4)
        self.assertEqual(mats.A_d.shape, (4, 4))
        self.assertEqual(mats.A_s.shape, (1, 4))

    def test_weighted_incidence(self):
        refined = refine(load_network('chain5.json'), 1e4)
        mats = assemble_matrices(refined)
        B, B_s, B_d = weighted_incidence(mats, [1.25])
        B = B.toarray()
        self.assertEqual(B[0, 0], -1.25)
        self.assertEqual(B[1, 0], 1.)
        self.assertEqual(B_s.shape, (1, 4))
        self.assertEqual(B_d.shape, (4, 4))

        with self.assertRaisesCtx(DomainError):
            weighted_incidence(mats, [1.7])
        with self.assertRaisesCtx(DomainError):
            weighted_incidence(mats, [1.2, 1.2])
        _, B_s, _ = weighted_incidence(mats, [1.7], clamp=True)
        self.assertEqual(B_s.toarray()[0, 0], -1.6)

    def test_w_is_cached(self):
        refined = refine(load_network('chain5.json'), 1e4)
        mats = assemble_matrices(refined)
        self.assertTrue(mats.factor([1.2]) is mats.factor([1.2]))
        self.assertFalse(mats.factor([1.2]) is mats.factor([1.3]))
        self.assertEqual(mats.W([1.2]).shape, (4, 4))
