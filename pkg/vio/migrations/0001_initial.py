# Generated by Django 5.0.1 on 2026-10-18 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunManifest',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('simulate', 'Simulate'), ('estimate', 'Estimate'), ('montecarlo', 'Monte Carlo'), ('jacobian_check', 'Jacobian check'), ('euler_study', 'Euler study')], max_length=20)),
                ('config_path', models.CharField(blank=True, max_length=500)),
                ('config_snapshot', models.JSONField(blank=True, default=dict)),
                ('seeds', models.JSONField(blank=True, default=list)),
                ('output_dir', models.CharField(max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=20)),
                ('exit_code', models.IntegerField(blank=True, null=True)),
                ('message', models.TextField(blank=True)),
                ('tool_version', models.CharField(max_length=20)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='MonteCarloRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('seed', models.IntegerField()),
                ('status', models.CharField(choices=[('succeeded', 'Succeeded'), ('failed', 'Failed')], max_length=20)),
                ('message', models.TextField(blank=True)),
                ('iterations', models.IntegerField(blank=True, null=True)),
                ('final_cost', models.FloatField(blank=True, null=True)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('manifest', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='runs', to='vio.runmanifest')),
            ],
            options={
                'ordering': ['manifest', 'seed'],
                'unique_together': {('manifest', 'seed')},
            },
        ),
    ]
