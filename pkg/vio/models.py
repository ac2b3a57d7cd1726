"""
Django models for run bookkeeping.
"""
from django.db import models


class RunManifest(models.Model):
    """One command invocation and everything needed to repeat it."""
    COMMAND_CHOICES = [
        ('simulate', 'Simulate'),
        ('estimate', 'Estimate'),
        ('montecarlo', 'Monte Carlo'),
        ('jacobian_check', 'Jacobian check'),
        ('euler_study', 'Euler study'),
    ]
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('succeeded', 'Succeeded'),
        ('failed', 'Failed'),
    ]

    command = models.CharField(max_length=20, choices=COMMAND_CHOICES)
    config_path = models.CharField(max_length=500, blank=True)
    config_snapshot = models.JSONField(default=dict, blank=True)
    seeds = models.JSONField(default=list, blank=True)
    output_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    exit_code = models.IntegerField(null=True, blank=True)
    message = models.TextField(blank=True)
    tool_version = models.CharField(max_length=20)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f'{self.command} -> {self.output_dir} ({self.status})'


class MonteCarloRun(models.Model):
    """One seed of a Monte-Carlo campaign."""
    STATUS_CHOICES = [
        ('succeeded', 'Succeeded'),
        ('failed', 'Failed'),
    ]

    manifest = models.ForeignKey(RunManifest, on_delete=models.CASCADE, related_name='runs')
    seed = models.IntegerField()
    status = models.CharField(max_length=20, choices=STATUS_CHOICES)
    message = models.TextField(blank=True)
    iterations = models.IntegerField(null=True, blank=True)
    final_cost = models.FloatField(null=True, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['manifest', 'seed']
        unique_together = [('manifest', 'seed')]

    def __str__(self):
        return f'run seed={self.seed} ({self.status})'
