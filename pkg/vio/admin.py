from django.contrib import admin

from .models import MonteCarloRun, RunManifest


class MonteCarloRunInline(admin.TabularInline):
    model = MonteCarloRun
    extra = 0
    readonly_fields = ['seed', 'status', 'iterations', 'final_cost', 'output_dir', 'created_at']


@admin.register(RunManifest)
class RunManifestAdmin(admin.ModelAdmin):
    list_display = ['id', 'command', 'status', 'exit_code', 'output_dir', 'started_at']
    list_filter = ['command', 'status', 'started_at']
    search_fields = ['config_path', 'output_dir', 'message']
    readonly_fields = ['started_at', 'finished_at', 'tool_version']
    inlines = [MonteCarloRunInline]


@admin.register(MonteCarloRun)
class MonteCarloRunAdmin(admin.ModelAdmin):
    list_display = ['id', 'manifest', 'seed', 'status', 'iterations', 'final_cost']
    list_filter = ['status']
    readonly_fields = ['created_at']
