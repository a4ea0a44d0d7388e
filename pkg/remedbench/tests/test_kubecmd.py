import pytest

from remedbench.exceptions import CommandParseError, UnsupportedCommand
from remedbench.functions import cluster_sim
from remedbench.functions.jsonpath import jsonpath_eval
from remedbench.functions.kubecmd import CHANGE_CAUSE, Verb, chaos_json, deployment_json, parse_command, pod_json, run_command
from remedbench.tests.conftest import check_golden


def test_parse_get_with_jsonpath():
    cmd = parse_command("kubectl get deployment ts-news-service -n train-ticket "
                        "-o jsonpath='{.spec.replicas}'")
    assert cmd.verb == Verb.GET
    assert cmd.kind == "deployment"
    assert cmd.name == "ts-news-service"
    assert cmd.namespace == "train-ticket"
    assert cmd.output == "jsonpath={.spec.replicas}"
    assert not cmd.mutating


def test_parse_slash_form_and_default_namespace():
    cmd = parse_command("kubectl set resources deployment/sm-order --limits=cpu=1,memory=1Gi --record",
                        default_namespace="simple-micro")
    assert cmd.verb == Verb.SET_RESOURCES
    assert cmd.name == "sm-order"
    assert cmd.namespace == "simple-micro"
    assert cmd.limits == (("cpu", "1"), ("memory", "1Gi"))
    assert cmd.record
    assert cmd.mutating


def test_parse_set_env_assignments():
    cmd = parse_command("kubectl set env deployment/sm-user DB_HOST=sm-db SESSION_TTL-")
    assert cmd.env == (("DB_HOST", "sm-db"), ("SESSION_TTL", None))


def test_render_parses_back():
    line = "kubectl scale deployment sm-order -n simple-micro --replicas=3 --record"
    cmd = parse_command(line)
    assert parse_command(cmd.render()) == cmd


@pytest.mark.parametrize("line", [
    "kubectl scale deployment/sm-order",
    "kubectl scale deployment/sm-order --replicas=-1",
    "kubectl scale deployment/sm-order --replicas=many",
    "kubectl get pods --force",
    "kubectl get pods -A",
    "kubectl get pods -o table",
    "kubectl get pods -o jsonpath='{spec}'",
    "kubectl set resources deployment/sm-order",
    "kubectl set resources deployment/sm-order --limits=gpu=1",
    "kubectl rollout restart deployment",
    "kubectl get 'unterminated",
])
def test_parse_errors(line):
    with pytest.raises(CommandParseError):
        parse_command(line)


@pytest.mark.parametrize("line", [
    "kubectl exec sm-db-1-1 cat /etc/hosts",
    "kubectl top node",
    "kubectl scale statefulset/sm-db --replicas=2",
    "kubectl delete deployment sm-order",
    "top -bn1",
])
def test_unsupported(line):
    with pytest.raises(UnsupportedCommand):
        parse_command(line)


def test_run_command_never_raises(sm_state):
    _, result = run_command("kubectl exec sm-db-1-1", sm_state)
    assert result.rc == 127
    assert result.stderr == "unsupported in simulator: exec"
    _, result = run_command("kubectl scale deployment/sm-order", sm_state)
    assert result.rc == 1
    assert result.stderr.startswith("error: scale: --replicas is required")


def test_get_deployment_table_and_jsonpath(sm_state):
    _, result = run_command("kubectl get deployments -n simple-micro", sm_state)
    assert result.rc == 0
    lines = result.stdout.splitlines()
    assert lines[0].split() == ["NAME", "READY", "UP-TO-DATE", "AVAILABLE", "AGE"]
    assert lines[1].split()[:2] == ["sm-gateway", "2/2"]
    _, result = run_command("kubectl get deployment sm-db -n simple-micro "
                            "-o jsonpath='{.spec.template.spec.containers[0].resources.limits.cpu}'", sm_state)
    assert result.stdout == "1"


def test_get_pods_by_label(sm_state):
    _, result = run_command("kubectl get pods -n simple-micro -l app=sm-gateway -o name", sm_state)
    assert result.stdout == "pod/sm-gateway-1-1\npod/sm-gateway-1-2"
    _, result = run_command("kubectl get pods -n simple-micro -l app=sm-gateway "
                            "-o jsonpath='{.items[*].metadata.name}'", sm_state)
    assert result.stdout == "sm-gateway-1-1 sm-gateway-1-2"


def test_missing_objects(sm_state):
    _, result = run_command("kubectl get hpa -n simple-micro", sm_state)
    assert (result.rc, result.stdout) == (0, "No resources found in simple-micro namespace.")
    _, result = run_command("kubectl get hpa sm-order -n simple-micro", sm_state)
    assert result.rc == 1
    assert "NotFound" in result.stderr
    _, result = run_command("kubectl get deployment sm-order -n elsewhere", sm_state)
    assert result.rc == 1
    assert 'deployments.apps "sm-order" not found' in result.stderr


def test_jsonpath_missing_or_scalar_index_is_empty():
    doc = {"spec": {"replicas": 2}}
    assert jsonpath_eval("{.spec.replicas}", doc) == "2"
    assert jsonpath_eval("{.spec.missing}", doc) == ""
    assert jsonpath_eval("{.spec.replicas[0]}", doc) == ""
    named = {"spec": {"name": "hello", "ports": [{"port": 80}, {"port": 443}]}}
    assert jsonpath_eval("{.spec.name[0]}", named) == ""
    assert jsonpath_eval("{.spec.name[*]}", named) == ""
    assert jsonpath_eval("{.spec.ports[1].port}", named) == "443"
    assert jsonpath_eval("{.spec.ports[*].port}", named) == "80 443"
    assert jsonpath_eval("{.spec.ports[5].port}", named) == ""


def test_scale(sm_state):
    _, result = run_command("kubectl scale deployment/sm-order -n simple-micro --replicas=3 --record", sm_state)
    assert result.stdout == "deployment.apps/sm-order scaled"
    assert result.mutated
    assert cluster_sim.ready_counts(sm_state, "sm-order") == (3, 3)
    assert sm_state.deployments["sm-order"].annotations[CHANGE_CAUSE].startswith("kubectl scale deployment sm-order")


def test_set_resources_validation_leaves_state(sm_state):
    before = cluster_sim.state_hash(sm_state)
    _, result = run_command("kubectl set resources deployment/sm-order -n simple-micro --requests=cpu=2", sm_state)
    assert result.rc == 1
    assert "must be less than or equal to cpu limit" in result.stderr
    assert cluster_sim.state_hash(sm_state) == before


def test_set_resources_bumps_generation(sm_state):
    _, result = run_command("kubectl set resources deployment/sm-order -n simple-micro --limits=cpu=1000m",
                            sm_state)
    assert result.mutated
    assert sm_state.deployments["sm-order"].generation == 2
    assert [p.name for p in cluster_sim.pods_of(sm_state, "sm-order")] == ["sm-order-2-2"]
    _, again = run_command("kubectl set resources deployment/sm-order -n simple-micro --limits=cpu=1000m",
                           sm_state)
    assert again.rc == 0 and not again.mutated


def test_set_env_noop(sm_state):
    _, result = run_command("kubectl set env deployment/sm-db -n simple-micro POSTGRES_DB=simple", sm_state)
    assert result.rc == 0
    assert result.stdout == ""
    assert not result.mutated


def test_rollout(sm_state):
    _, result = run_command("kubectl rollout restart deployment/sm-user -n simple-micro", sm_state)
    assert result.stdout == "deployment.apps/sm-user restarted"
    _, result = run_command("kubectl rollout status deployment/sm-user -n simple-micro", sm_state)
    assert result.stdout == 'deployment "sm-user" successfully rolled out'


def test_delete_pod_is_replaced(sm_state):
    _, result = run_command("kubectl delete pod sm-db-1-1 -n simple-micro", sm_state)
    assert result.stdout == 'pod "sm-db-1-1" deleted'
    assert [p.name for p in cluster_sim.pods_of(sm_state, "sm-db")] == ["sm-db-1-2"]


def test_top_and_describe_show_stress(news_cpu):
    state, record = news_cpu
    _, result = run_command("kubectl top pods -n train-ticket -l app=ts-news-service", state)
    assert result.stdout.splitlines()[1].split() == ["ts-news-service-1-1", "450m", "40Mi"]
    _, result = run_command("kubectl describe pod ts-news-service-1-1 -n train-ticket", state)
    assert "450m / 500m (90%)" in result.stdout


def test_get_and_delete_chaos(news_cpu):
    state, record = news_cpu
    _, result = run_command("kubectl get stresschaos -n train-ticket -o name", state)
    assert result.stdout == f"stresschaos.chaos-mesh.org/{record.chaos_object_name}"
    _, result = run_command(f"kubectl delete stresschaos {record.chaos_object_name} -n train-ticket", state)
    assert result.mutated
    assert state.chaos == []


def test_read_only_refuses_mutation(sm_state):
    before = cluster_sim.state_hash(sm_state)
    _, result = run_command("kubectl scale deployment/sm-order --replicas=5", sm_state, read_only=True)
    assert result.rc == 1
    assert result.stderr == "probe must be read-only"
    assert cluster_sim.state_hash(sm_state) == before


def test_news_service_json_renderings(news_cpu):
    state, record = news_cpu
    pod, = cluster_sim.pods_of(state, "ts-news-service")
    stress, = state.chaos
    check_golden("news_deployment", deployment_json(state, state.deployments["ts-news-service"]))
    check_golden("news_pod", pod_json(state, pod))
    check_golden("news_stresschaos", chaos_json(stress))
