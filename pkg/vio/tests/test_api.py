from rest_framework import status
from rest_framework.test import APITestCase

from vio.models import MonteCarloRun, RunManifest


class RunApiTests(APITestCase):
    def setUp(self):
        self.campaign = RunManifest.objects.create(
            command='montecarlo', config_path='configs/desk_montecarlo.json',
            config_snapshot={'seed': 1000}, seeds=[1000, 1001], output_dir='out/mc',
            status='failed', exit_code=4, tool_version='1.0.0',
        )
        self.sim = RunManifest.objects.create(
            command='simulate', seeds=[0], output_dir='out/sim', status='succeeded',
            exit_code=0, tool_version='1.0.0',
        )
        MonteCarloRun.objects.create(manifest=self.campaign, seed=1000, status='succeeded',
                                     iterations=4, final_cost=812.5, output_dir='out/mc/run_1000')
        MonteCarloRun.objects.create(manifest=self.campaign, seed=1001, status='failed',
                                     message='Normal equations are singular')

    def test_list_manifests_is_wrapped(self):
        response = self.client.get('/api/manifests')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data['manifests']), 2)

    def test_filter_by_command(self):
        response = self.client.get('/api/manifests', {'command': 'montecarlo'})
        manifests = response.data['manifests']
        self.assertEqual(len(manifests), 1)
        self.assertEqual(manifests[0]['runCount'], 2)
        self.assertEqual(manifests[0]['seeds'], [1000, 1001])

    def test_retrieve_manifest(self):
        response = self.client.get(f'/api/manifests/{self.sim.id}')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['command'], 'simulate')
        self.assertEqual(response.data['runCount'], 0)

    def test_runs_of_a_manifest(self):
        response = self.client.get('/api/runs', {'manifest': self.campaign.id, 'status': 'failed'})
        runs = response.data['runs']
        self.assertEqual(len(runs), 1)
        self.assertEqual(runs[0]['seed'], 1001)

    def test_read_only(self):
        response = self.client.post('/api/manifests', {'command': 'simulate'}, format='json')
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)
        response = self.client.delete(f'/api/runs/{MonteCarloRun.objects.first().id}')
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)

    def test_missing_manifest(self):
        response = self.client.get('/api/manifests/9999')
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)
